"""Bayesian-bootstrap weights and the one-step correction engine.

Every posterior draw ``b`` is paired with its own Dirichlet(1, ..., 1) weight
vector drawn from an RNG stream keyed by ``(seed, b)``, so results do not
depend on how rows are scheduled across threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import CorrectedDraws, _frozen, csv_text, read_csv_table
from .errors import (
    InsufficientDrawsError,
    NumericError,
    ParseError,
    RngDegenerateError,
    ShapeError,
)

MASK64 = (1 << 64) - 1

# stream roles; keep values stable, they are part of the reproducibility contract
ROLE_CORRECTION = 1
ROLE_PROPENSITY = 2
ROLE_OUTCOME = 3
ROLE_PLUGIN = 4
ROLE_DPMM = 5
ROLE_DATA = 6
ROLE_REPLICATE = 7

_MAX_REDRAWS = 10
_SUM_FLOOR = 1e-300


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix64(a, b):
    """Combine two 64-bit integers into a well-scrambled 64-bit key."""
    return splitmix64((splitmix64(a & MASK64) ^ ((b & MASK64) * 0xD6E8FEB86659FD93 & MASK64)) & MASK64)


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & MASK64)

    def substream(self, *keys):
        """Child stream; ``keys`` are folded into the stream id in order."""
        sid = mix64(self.seed, self.stream_id)
        for k in keys:
            sid = mix64(sid, int(k))
        return RngStream(self.seed, sid)

    def generator(self):
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32,
                                     self.stream_id & 0xFFFFFFFF, self.stream_id >> 32])
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray

    def __post_init__(self):
        w = _frozen(self.w).ravel()
        if w.size < 1 or not np.all(w > 0) or abs(w.sum() - 1.0) > 1e-12:
            raise NumericError("weights must be positive and sum to one")
        object.__setattr__(self, "w", w)

    @property
    def n(self):
        return self.w.size


@dataclass(frozen=True)
class InfluenceMatrix:
    """Per-draw influence values at the data (``psi``, B x n) and plug-ins.

    ``clipped`` counts propensity values that were floored while building
    the matrix (only nonzero when clipping was explicitly enabled).
    """

    psi: np.ndarray
    plugin: np.ndarray
    clipped: int = 0

    def __post_init__(self):
        psi = _frozen(self.psi)
        if psi.ndim == 1:
            psi = _frozen(psi[None, :])
        plugin = _frozen(self.plugin).ravel()
        if psi.ndim != 2:
            raise ShapeError("psi must be a B x n matrix")
        if psi.shape[0] != plugin.size:
            raise ShapeError(f"psi has {psi.shape[0]} rows but plugin has {plugin.size} entries")
        if psi.shape[0] < 1 or psi.shape[1] < 1:
            raise InsufficientDrawsError("InfluenceMatrix needs B >= 1 and n >= 1")
        if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(plugin))):
            raise NumericError("InfluenceMatrix contains non-finite values")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "plugin", plugin)

    @property
    def B(self):
        return self.psi.shape[0]

    @property
    def n(self):
        return self.psi.shape[1]


def _dirichlet_array(n, gen):
    for _ in range(_MAX_REDRAWS):
        e = gen.standard_exponential(n)
        s = e.sum()
        if s >= _SUM_FLOOR and np.all(e > 0):
            return e / s
    raise RngDegenerateError(f"no usable Dirichlet draw after {_MAX_REDRAWS} attempts")


def draw_weights(n, rng):
    """Uniform Dirichlet weights of length ``n`` via normalized exponentials."""
    if int(n) < 1:
        raise ShapeError(f"need n >= 1, got {n}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return WeightVector(_dirichlet_array(int(n), gen))


def row_stream(rng, b):
    """Stream for the weight vector paired with posterior draw ``b``."""
    return rng.substream(b)


def correct_draw(plugin, psi_row, w):
    """``plugin + sum_i w_i psi_row[i]``."""
    weights = w.w if isinstance(w, WeightVector) else np.asarray(w, float)
    psi_row = np.asarray(psi_row, float)
    if psi_row.shape != weights.shape:
        raise ShapeError(f"psi row has length {psi_row.size}, weights {weights.size}")
    out = float(plugin) + float(weights @ psi_row)
    if not np.isfinite(out):
        raise NumericError("corrected draw is not finite")
    return out


def _chunks(B, threads):
    k = max(1, min(int(threads), B))
    step = -(-B // k)
    return [range(s, min(s + step, B)) for s in range(0, B, step)]


def map_rows(fn, B, threads=1):
    """Evaluate ``fn(b)`` for b in 0..B-1, in parallel if asked, index-ordered."""
    if threads <= 1 or B < 2:
        return [fn(b) for b in range(B)]
    chunks = _chunks(B, threads)
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = pool.map(lambda rows: [fn(b) for b in rows], chunks)
    return [v for part in parts for v in part]


def posterior_weight(rng, b, n):
    return draw_weights(n, row_stream(rng, b))


def one_step_posterior(infl, rng, functional_id="custom", fingerprint="", threads=1):
    """Apply the one-step correction to every row of ``infl``.

    Row ``b`` receives a fresh weight vector from ``row_stream(rng, b)``.
    """
    n = infl.n

    def one(b):
        w = posterior_weight(rng, b, n)
        return correct_draw(infl.plugin[b], infl.psi[b], w)

    values = map_rows(one, infl.B, threads)
    return CorrectedDraws(values=np.array(values), functional_id=functional_id,
                          seed=rng.seed, n=n, fingerprint=fingerprint)


def weighted_posterior(fn, n, B, rng, functional_id="custom", fingerprint="", threads=1):
    """Draws ``fn(b, w_b)`` for corrections that are not linear in the weights."""

    def one(b):
        out = float(fn(b, posterior_weight(rng, b, n)))
        if not np.isfinite(out):
            raise NumericError(f"non-finite corrected value at draw {b}")
        return out

    values = map_rows(one, B, threads)
    return CorrectedDraws(values=np.array(values), functional_id=functional_id,
                          seed=rng.seed, n=n, fingerprint=fingerprint)


# --- InfluenceMatrix CSV ------------------------------------------------------


def influence_csv_text(infl):
    header = ["plugin"] + [f"psi_{i + 1}" for i in range(infl.n)]
    rows = np.column_stack([infl.plugin, infl.psi])
    return csv_text(header, rows)


def load_influence_csv(path):
    header, table = read_csv_table(path)
    n = len(header) - 1
    expected = ["plugin"] + [f"psi_{i + 1}" for i in range(n)]
    if n < 1 or header != expected:
        raise ParseError("header must be plugin,psi_1,...,psi_n", path=path, line=1)
    if table.shape[0] < 1:
        raise ParseError("no posterior draws in file", path=path, line=2)
    bad = np.argwhere(~np.isfinite(table))
    if bad.size:
        raise ParseError("missing or non-finite value", path=path, line=int(bad[0, 0]) + 2)
    return InfluenceMatrix(psi=table[:, 1:], plugin=table[:, 0])
