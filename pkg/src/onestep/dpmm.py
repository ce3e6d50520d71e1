"""Blocked Gibbs sampler for a truncated Dirichlet-process Gaussian location mixture.

Model: ``z_i ~ sum_h w_h N(mu_h, sigma^2)`` with stick-breaking weights
(mass ``M``), atoms from ``N(base_mean, base_sd^2)`` and
``sigma^2 ~ InvGamma(a, b)``.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .core import _frozen, csv_text, read_csv_table
from .errors import ConfigError, DataError, DomainError, NumericError, ParseError

log = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MixtureDraw:
    weights: np.ndarray
    atoms: np.ndarray
    sigma: float

    def __post_init__(self):
        w = _frozen(self.weights).ravel()
        mu = _frozen(self.atoms).ravel()
        sigma = float(self.sigma)
        if w.size < 1 or w.size != mu.size:
            raise DomainError("weights and atoms must be non-empty and of equal length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise DomainError("mixture weights must be nonnegative and sum to one")
        if not np.all(np.isfinite(mu)):
            raise DomainError("atoms must be finite")
        if not (np.isfinite(sigma) and sigma > 0):
            raise DomainError(f"sigma must be finite and positive, got {sigma}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "atoms", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def H(self):
        return self.weights.size


@dataclass(frozen=True)
class DpmmConfig:
    mass: float = 1.0
    base_mean: float = 0.0
    base_sd: float = 1.0
    a: float = 1.0
    b: float = 1.0
    truncation: int = 30
    burn_in: int = 2000
    keep: int = 2000
    thin: int = 1

    def __post_init__(self):
        for name in ("mass", "base_sd", "a", "b"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.truncation < 2:
            raise ConfigError("truncation must be at least 2")
        if self.burn_in < 0 or self.keep < 1 or self.thin < 1:
            raise ConfigError("need burn_in >= 0, keep >= 1, thin >= 1")


def density_at(mix, points):
    """Mixture density at ``points``, evaluated as a log-sum-exp."""
    z = np.asarray(points, dtype=float)
    logw = np.log(mix.weights, where=mix.weights > 0, out=np.full(mix.H, -np.inf))
    u = (z[..., None] - mix.atoms) / mix.sigma
    logk = logw - 0.5 * u * u
    top = np.max(logk, axis=-1, keepdims=True)
    s = np.sum(np.exp(logk - top), axis=-1)
    return np.exp(top[..., 0] - _LOG_SQRT_2PI - np.log(mix.sigma)) * s


def _stick_weights(v):
    # w_h = v_h prod_{l<h} (1 - v_l); v_H = 1 closes the stick
    rest = np.concatenate(([1.0], np.cumprod(1.0 - v[:-1])))
    w = v * rest
    return w / w.sum()


def fit(data, cfg=None, rng=None):
    """Run the blocked Gibbs sampler and return the retained mixture draws.

    Each sweep updates, in order: allocations, stick proportions, atoms
    (conjugate normal) and ``sigma^2`` (conjugate inverse gamma).

    Parameters
    ----------
    data : UnivariateData
    cfg : DpmmConfig, optional
    rng : RngStream or numpy.random.Generator

    Returns
    -------
    list of MixtureDraw
        ``cfg.keep`` draws taken every ``cfg.thin`` sweeps after burn-in.
    """
    cfg = cfg or DpmmConfig()
    z = np.asarray(data.z, dtype=float)
    n = z.size
    if n < 2:
        raise DataError(f"DPMM fit needs n >= 2 observations, got {n}")
    if rng is None:
        raise ConfigError("an explicit RNG stream is required")
    gen = rng.generator() if hasattr(rng, "generator") else rng

    H = cfg.truncation
    prior_prec = 1.0 / cfg.base_sd**2
    prior_shift = cfg.base_mean * prior_prec

    # start from the prior sticks, atoms at random data points
    v = gen.beta(1.0, cfg.mass, size=H)
    v[-1] = 1.0
    w = _stick_weights(v)
    mu = gen.choice(z, size=H, replace=True)
    sigma2 = max(np.var(z), 1e-8)

    total = cfg.burn_in + cfg.keep * cfg.thin
    out = []
    for sweep in range(total):
        # (i) allocations
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        diff = z[:, None] - mu[None, :]
        logp = logw - (0.5 / sigma2) * diff * diff
        logp -= logp.max(axis=1, keepdims=True)
        p = np.exp(logp)
        cum = np.cumsum(p, axis=1)
        if not np.all(np.isfinite(cum[:, -1])):
            raise NumericError(f"non-finite allocation probabilities at sweep {sweep}")
        u = gen.random(n) * cum[:, -1]
        c = (cum < u[:, None]).sum(axis=1)
        np.minimum(c, H - 1, out=c)

        # (ii) sticks
        counts = np.bincount(c, minlength=H).astype(float)
        tail = np.cumsum(counts[::-1])[::-1] - counts
        v = gen.beta(1.0 + counts[:-1], cfg.mass + tail[:-1])
        v = np.append(v, 1.0)
        w = _stick_weights(v)

        # (iii) atoms
        sums = np.bincount(c, weights=z, minlength=H)
        prec = prior_prec + counts / sigma2
        mean = (prior_shift + sums / sigma2) / prec
        mu = mean + gen.standard_normal(H) / np.sqrt(prec)

        # (iv) sigma^2
        resid = z - mu[c]
        shape = cfg.a + 0.5 * n
        scale = cfg.b + 0.5 * float(resid @ resid)
        sigma2 = scale / gen.gamma(shape)
        if not (np.isfinite(sigma2) and sigma2 > 0 and np.all(np.isfinite(mu))):
            raise NumericError(f"non-finite parameter state at sweep {sweep}")

        kept = sweep - cfg.burn_in
        if kept >= 0 and kept % cfg.thin == 0:
            out.append(MixtureDraw(weights=w.copy(), atoms=mu.copy(), sigma=np.sqrt(sigma2)))
    return out


def fit_chains(data, cfg, rngs):
    """Independent chains, concatenated in chain order."""
    draws = []
    for r in rngs:
        draws.extend(fit(data, cfg, r))
    return draws


def density_matrix(draws, points):
    """``f_b(z_i)`` for every draw ``b`` and point ``i`` (B x n)."""
    z = np.asarray(points, dtype=float)
    out = np.empty((len(draws), z.size))
    for b, m in enumerate(draws):
        out[b] = density_at(m, z)
    return out


# --- CSV interchange ---------------------------------------------------------------


def mixture_csv_text(draws):
    H = draws[0].H
    header = ["sigma"] + [f"w_{h + 1}" for h in range(H)] + [f"mu_{h + 1}" for h in range(H)]
    rows = [np.concatenate(([m.sigma], m.weights, m.atoms)) for m in draws]
    return csv_text(header, rows)


def load_mixture_csv(path):
    header, table = read_csv_table(path)
    if len(header) < 3 or (len(header) - 1) % 2:
        raise ParseError("header must be sigma,w_1..w_H,mu_1..mu_H", path=path, line=1)
    H = (len(header) - 1) // 2
    expected = ["sigma"] + [f"w_{h + 1}" for h in range(H)] + [f"mu_{h + 1}" for h in range(H)]
    if header != expected:
        raise ParseError("header must be sigma,w_1..w_H,mu_1..mu_H", path=path, line=1)
    if table.shape[0] < 1:
        raise ParseError("no mixture draws in file", path=path, line=2)
    draws = []
    for r, row in enumerate(table):
        try:
            draws.append(MixtureDraw(weights=row[1:H + 1], atoms=row[H + 1:], sigma=row[0]))
        except DomainError as exc:
            raise ParseError(str(exc), path=path, line=r + 2) from None
    return draws
