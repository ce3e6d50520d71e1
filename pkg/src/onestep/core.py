"""Shared data containers, posterior summaries and CSV helpers."""

import csv
import hashlib
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    InsufficientDrawsError,
    NumericError,
    ParseError,
    ShapeError,
)


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def fingerprint(*arrays):
    """Short SHA-256 digest identifying the numeric content of ``arrays``."""
    h = hashlib.sha256()
    for arr in arrays:
        a = np.ascontiguousarray(arr)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class UnivariateData:
    """i.i.d. real observations ``z``."""

    z: np.ndarray

    def __post_init__(self):
        z = _frozen(self.z).ravel()
        if z.size < 1:
            raise DataError("UnivariateData needs at least one observation")
        if not np.all(np.isfinite(z)):
            raise DataError("UnivariateData contains non-finite values")
        object.__setattr__(self, "z", z)

    @property
    def n(self):
        return self.z.size

    def fingerprint(self):
        return fingerprint(self.z)


@dataclass(frozen=True)
class CausalData:
    """Covariates ``x`` (n x d), binary ``a`` and outcomes ``y``.

    In MAR mode ``a`` is the response indicator and ``y`` may be missing where
    ``a == 0``. Missingness is carried by the boolean ``observed`` mask; the
    corresponding ``y`` entries hold NaN and are never used in arithmetic.
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    mar: bool = False
    observed: np.ndarray = None

    def __post_init__(self):
        x = np.array(self.x, dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ShapeError("x must be a vector or an n x d matrix")
        a_raw = np.asarray(self.a, dtype=float).ravel()
        y = np.array(self.y, dtype=float, copy=True).ravel()
        n = x.shape[0]
        if a_raw.size != n or y.size != n:
            raise ShapeError(
                f"row counts differ: x has {n}, a has {a_raw.size}, y has {y.size}"
            )
        if n < 1:
            raise DataError("CausalData needs at least one row")
        if not np.all((a_raw == 0) | (a_raw == 1)):
            raise DataError("a must contain only 0/1 values")
        if not np.all(np.isfinite(x)):
            raise DataError("x contains non-finite values")
        a = a_raw.astype(np.int8)
        if self.observed is None:
            observed = np.isfinite(y)
        else:
            observed = np.asarray(self.observed, dtype=bool).ravel().copy()
            if observed.size != n:
                raise ShapeError("observed mask has the wrong length")
        if np.any(observed & ~np.isfinite(y)):
            raise DataError("y is non-finite at a row flagged as observed")
        if self.mar:
            if np.any((a == 1) & ~observed):
                raise DataError("MAR data: y must be observed whenever a = 1")
        elif not np.all(observed):
            raise DataError("y is missing at some rows; missing outcomes need mar=True")
        y = np.where(observed, y, np.nan)
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "a", _frozen(a, np.int8))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "observed", _frozen(observed, bool))

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def fingerprint(self):
        return fingerprint(self.x, self.a, np.where(self.observed, self.y, 0.0), self.observed)


@dataclass(frozen=True)
class CorrectedDraws:
    """Draws from a (corrected or plug-in) posterior plus the seed, sample size and data fingerprint."""

    values: np.ndarray
    functional_id: str
    seed: int
    n: int
    fingerprint: str = ""

    def __post_init__(self):
        v = _frozen(self.values).ravel()
        if v.size < 1:
            raise InsufficientDrawsError("CorrectedDraws needs B >= 1 values")
        if not np.all(np.isfinite(v)):
            raise NumericError("CorrectedDraws contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def B(self):
        return self.values.size


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    sd: float
    lower: float
    upper: float
    level: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise NumericError("summary interval has lower > upper")
        if not self.sd >= 0:
            raise NumericError("summary sd must be nonnegative")

    @property
    def length(self):
        return self.upper - self.lower

    def to_dict(self):
        return {
            "mean": self.mean,
            "sd": self.sd,
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
        }


def quantile_sorted(v, p):
    """Linear-interpolation quantile of already sorted values.

    Uses index ``h = (B - 1) p`` and interpolates between the bracketing
    order statistics.
    """
    h = (v.size - 1) * p
    lo = int(math.floor(h))
    frac = h - lo
    if lo + 1 >= v.size:
        return float(v[-1])
    return float(v[lo] + frac * (v[lo + 1] - v[lo]))


def summarize(draws, level=0.95):
    """Posterior mean, sample sd and equal-tailed credible interval.

    Parameters
    ----------
    draws : CorrectedDraws or array_like
        Posterior draws; at least two are needed.
    level : float
        Central credible level in (0, 1).

    Returns
    -------
    PosteriorSummary
    """
    if not 0.0 < level < 1.0:
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    values = draws.values if isinstance(draws, CorrectedDraws) else np.asarray(draws, float).ravel()
    if values.size < 2:
        raise InsufficientDrawsError(f"summarize needs B >= 2 draws, got {values.size}")
    v = np.sort(values)
    mean = float(np.mean(v))
    sd = float(np.std(v, ddof=1))
    lower = quantile_sorted(v, (1.0 - level) / 2.0)
    upper = quantile_sorted(v, (1.0 + level) / 2.0)
    # keep the degenerate case exact: every draw identical
    if v[0] == v[-1]:
        mean, sd, lower, upper = float(v[0]), 0.0, float(v[0]), float(v[0])
    return PosteriorSummary(mean=mean, sd=sd, lower=lower, upper=upper, level=level)


def covers(summary, truth):
    """Closed-interval coverage check."""
    return bool(summary.lower <= truth <= summary.upper)


# --- CSV plumbing -----------------------------------------------------------


def format_float(x):
    return repr(float(x))


def read_csv_table(path):
    """Read a numeric CSV with a header row.

    Empty cells become NaN. Returns ``(header, rows)`` where ``rows`` is a
    float array of shape (records, columns). Raises :class:`ParseError`
    with the offending line number on malformed input.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ParseError("file not found", path=path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path=path, line=1) from None
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise ParseError("header has empty column names", path=path, line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(row)}", path=path, line=lineno
                )
            vals = []
            for cell in row:
                cell = cell.strip()
                if cell == "":
                    vals.append(math.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(f"cannot parse {cell!r} as a number", path=path, line=lineno) from None
            rows.append(vals)
    table = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, table


def csv_text(header, rows):
    """Render a header and 2-D numeric rows as CSV text (round-trip floats)."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temp file and atomic rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_univariate_csv(path, column="z"):
    header, table = read_csv_table(path)
    if column not in header:
        if len(header) == 1:
            column = header[0]
        else:
            raise ParseError(f"no column {column!r} in header {header}", path=path, line=1)
    values = table[:, header.index(column)]
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ParseError(f"missing or non-finite value in column {column!r}", path=path, line=int(bad[0]) + 2)
    return UnivariateData(values)


def load_causal_csv(path, mar=False):
    """Load ``a``, ``y`` and covariate columns (every other column) from CSV."""
    header, table = read_csv_table(path)
    for col in ("a", "y"):
        if col not in header:
            raise ParseError(f"missing required column {col!r}", path=path, line=1)
    xcols = [i for i, h in enumerate(header) if h not in ("a", "y")]
    a = table[:, header.index("a")]
    y = table[:, header.index("y")]
    x = table[:, xcols] if xcols else np.zeros((table.shape[0], 0))
    for i in range(table.shape[0]):
        if not (a[i] == 0 or a[i] == 1):
            raise ParseError("column 'a' must be 0 or 1", path=path, line=i + 2)
        if not np.all(np.isfinite(x[i])):
            raise ParseError("covariate value missing or non-finite", path=path, line=i + 2)
        if not np.isfinite(y[i]) and (not mar or a[i] == 1):
            raise ParseError("outcome y missing where it must be observed", path=path, line=i + 2)
    return CausalData(x=x, a=a, y=y, mar=mar)


def causal_csv_text(data):
    header = [f"x_{j + 1}" for j in range(data.d)] + ["a", "y"]
    lines = [",".join(header)]
    for i in range(data.n):
        cells = [format_float(v) for v in data.x[i]]
        cells.append(str(int(data.a[i])))
        cells.append(format_float(data.y[i]) if data.observed[i] else "")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def univariate_csv_text(data):
    return "z\n" + "".join(format_float(v) + "\n" for v in data.z)

