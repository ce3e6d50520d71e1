"""Influence-function corrections for the supported target functionals.

Linear functionals, the integrated squared density and the MAR outcome mean
are linear in the Bayesian-bootstrap weights and are expressed as
:class:`InfluenceMatrix` objects. The ATT, ACTT and CATE corrections divide
by the weighted treated fraction (or need per-draw plug-ins over the
empirical covariate distribution) and are computed per weight vector.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .bayes_bootstrap import InfluenceMatrix, WeightVector, weighted_posterior
from .dpmm import density_at
from .errors import (
    ConfigError,
    DataError,
    DegenerateError,
    DomainError,
    InvariantViolationError,
    PositivityError,
    ShapeError,
)

log = logging.getLogger(__name__)

FUNCTIONALS = ("linear", "isd", "mar_mean", "mar_mean_fixed_pi", "att", "actt", "cate")
DEFAULT_FLOOR = 1e-3

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class FunctionalSpec:
    """Functional identifier plus its options.

    Options: ``positivity_floor`` (float, default 1e-3), ``clip`` (bool,
    default False) and, for ``linear``, ``g_column`` naming the data column
    that holds g(Z_i).
    """

    id: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in FUNCTIONALS:
            raise ConfigError(f"unknown functional {self.id!r}; expected one of {FUNCTIONALS}")
        opts = dict(self.options)
        floor = float(opts.get("positivity_floor", DEFAULT_FLOOR))
        if not 0.0 <= floor < 0.5:
            raise ConfigError(f"positivity_floor must lie in [0, 0.5), got {floor}")
        opts["positivity_floor"] = floor
        opts["clip"] = bool(opts.get("clip", False))
        if "g_column" in opts and self.id != "linear":
            raise ConfigError("g_column only applies to the linear functional")
        object.__setattr__(self, "options", opts)

    @property
    def floor(self):
        return self.options["positivity_floor"]

    @property
    def clip(self):
        return self.options["clip"]

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "functional" not in d:
            raise ConfigError("functional options need a 'functional' key")
        fid = d.pop("functional")
        return cls(fid, d)

    def to_dict(self):
        return {"functional": self.id, **self.options}


@dataclass(frozen=True)
class AttDraw:
    chi_tilde: float
    ptilde_a: float

    def __post_init__(self):
        if not 0.0 < self.ptilde_a <= 1.0 + 1e-12:
            raise InvariantViolationError(f"weighted treated fraction {self.ptilde_a} outside (0, 1]")


# --- helpers -------------------------------------------------------------------


def _values(nuis):
    """2-D B x n array from NuisanceDraws or an array (1-D means one draw)."""
    v = getattr(nuis, "values", nuis)
    v = np.asarray(v, dtype=float)
    return v[None, :] if v.ndim == 1 else v


def _weights(w):
    return w.w if isinstance(w, WeightVector) else np.asarray(w, dtype=float)


def guard_propensity(pi, lower=None, upper=None, clip=False):
    """Check ``lower < pi`` and/or ``pi < upper``; optionally clip instead.

    Returns ``(pi, n_clipped)``. Raises :class:`PositivityError` naming the
    first offending ``(draw, index)`` unless ``clip`` is set.
    """
    pi = np.array(pi, dtype=float, copy=True)
    two_d = pi.ndim == 2
    bad = np.zeros(pi.shape, dtype=bool)
    if lower is not None:
        bad |= ~(pi > lower)
    if upper is not None:
        bad |= ~(pi < upper)
    count = int(bad.sum())
    if count == 0:
        return pi, 0
    if not clip:
        loc = np.argwhere(bad)[0]
        b, i = (int(loc[0]), int(loc[1])) if two_d else (None, int(loc[0]))
        bounds = f"({lower if lower is not None else '-inf'}, {upper if upper is not None else 'inf'})"
        raise PositivityError(
            f"propensity {float(pi[tuple(loc)])!r} at draw {b}, index {i} is outside {bounds}",
            draw=b, index=i,
        )
    if lower is not None:
        pi = np.where(pi > lower, pi, lower)
    if upper is not None:
        pi = np.where(pi < upper, pi, upper)
    log.warning("clipped %d propensity values", count)
    return pi, count


def _check_cols(n, *arrays):
    for arr in arrays:
        if arr.shape[-1] != n:
            raise ShapeError(f"nuisance values have {arr.shape[-1]} columns, data has {n} rows")


# --- linear --------------------------------------------------------------------


def linear_influence(g_values, B):
    """Rows ``psi = g(Z_i)`` with zero plug-in; the correction equals P~[g]."""
    g = np.asarray(g_values, dtype=float).ravel()
    if not np.all(np.isfinite(g)):
        raise DataError("g values must be finite")
    B = int(B)
    psi = np.broadcast_to(g, (B, g.size))
    return InfluenceMatrix(psi=psi, plugin=np.zeros(B))


# --- integrated squared density -------------------------------------------------


def _check_mixture(mix):
    sigma = float(mix.sigma)
    if not sigma > 0 or not np.isfinite(sigma):
        raise DomainError(f"bandwidth sigma must be positive, got {sigma}")
    if abs(np.sum(mix.weights) - 1.0) > 1e-10:
        raise DomainError("mixture weights must sum to one")


def isd_chi(mix):
    """Integrated squared density of a Gaussian location mixture (closed form).

    The convolution of two N(., sigma^2) kernels is a N(., 2 sigma^2) kernel,
    so the integral is a double sum over atom pairs.
    """
    _check_mixture(mix)
    w = np.asarray(mix.weights, dtype=float)
    mu = np.asarray(mix.atoms, dtype=float)
    s = mix.sigma * np.sqrt(2.0)
    diff = (mu[:, None] - mu[None, :]) / s
    kern = np.exp(-0.5 * diff * diff) * (_INV_SQRT_2PI / s)
    return float(w @ kern @ w)


def isd_influence(mix_draws, data, threads=1):
    """Centered rows ``2 (f_b(z_i) - chi(f_b))`` with plug-in ``chi(f_b)``."""
    z = data.z
    draws = list(mix_draws)
    if not draws:
        raise ShapeError("need at least one mixture draw")
    plugin = np.array([isd_chi(m) for m in draws])
    psi = np.empty((len(draws), z.size))
    for b, m in enumerate(draws):
        psi[b] = 2.0 * (density_at(m, z) - plugin[b])
    return InfluenceMatrix(psi=psi, plugin=plugin)


# --- missing-at-random outcome mean ----------------------------------------------


def _mar_psi(pi, m, data):
    a = data.a.astype(float)
    resid = np.where(data.a == 1, np.where(data.observed, data.y, 0.0)[None, :] - m, 0.0)
    return a[None, :] / pi * resid + m


def mar_influence(pi, m, data, floor=DEFAULT_FLOOR, clip=False):
    """Uncentered ``A/pi (Y - m) + m`` rows with zero plug-in.

    ``(Y - m)`` is taken as exactly 0 wherever ``a_i = 0``.
    """
    piv = _values(pi)
    mv = _values(m)
    _check_cols(data.n, piv, mv)
    if piv.shape[0] != mv.shape[0]:
        if piv.shape[0] == 1:
            piv = np.broadcast_to(piv, mv.shape)
        elif mv.shape[0] == 1:
            mv = np.broadcast_to(mv, piv.shape)
        else:
            raise ShapeError(f"pi has {piv.shape[0]} draws but m has {mv.shape[0]}")
    piv, clipped = guard_propensity(piv, lower=floor, clip=clip)
    psi = _mar_psi(piv, mv, data)
    return InfluenceMatrix(psi=psi, plugin=np.zeros(mv.shape[0]), clipped=clipped)


def mar_influence_fixed_pi(pi_hat, m, data, floor=DEFAULT_FLOOR, clip=False):
    """MAR correction with one fixed propensity vector shared by every draw."""
    pi_hat = np.asarray(getattr(pi_hat, "values", pi_hat), dtype=float)
    if pi_hat.ndim == 2:
        if pi_hat.shape[0] != 1:
            raise ShapeError("fixed propensity must be a single vector")
        pi_hat = pi_hat[0]
    return mar_influence(pi_hat[None, :], m, data, floor=floor, clip=clip)


def mar_second_order_bias(pi, m, pi0, m0, x_weights=None):
    """Remainder ``E[pi0 (1/pi0 - 1/pi)(m0 - m)]`` and its Cauchy-Schwarz bound.

    Expectations are taken over the supplied covariate points (uniform
    weights unless ``x_weights`` is given). Returns ``(r2, bound)``.
    """
    pi, m, pi0, m0 = (np.asarray(v, dtype=float) for v in (pi, m, pi0, m0))
    q = np.full(pi.size, 1.0 / pi.size) if x_weights is None else np.asarray(x_weights, float)
    dinv = 1.0 / pi0 - 1.0 / pi
    dm = m0 - m
    r2 = float(np.sum(q * pi0 * dinv * dm))
    bound = float(np.sqrt(np.sum(q * dinv**2)) * np.sqrt(np.sum(q * dm**2)))
    return r2, bound


# --- ATT / ACTT / CATE -------------------------------------------------------------


def _row(v, n):
    v = np.asarray(getattr(v, "values", v), dtype=float)
    if v.ndim == 2:
        if v.shape[0] != 1:
            raise ShapeError("expected a single nuisance draw (one row)")
        v = v[0]
    if v.size != n:
        raise ShapeError(f"nuisance draw has {v.size} values, data has {n} rows")
    return v


def _treated_fraction(data, w):
    if not np.any(data.a == 1):
        raise DataError("ATT-type functionals need at least one treated unit")
    pa = float(w @ data.a)
    if not pa > 0:
        raise InvariantViolationError("weighted treated fraction is zero")
    return pa


def _att_value(pi, mu0, data, w):
    pa = _treated_fraction(data, w)
    terms = (data.a - pi) * (data.y - mu0) / (1.0 - pi)
    return AttDraw(chi_tilde=float(w @ terms) / pa, ptilde_a=pa)


def att_corrected(pi, mu0, data, w, floor=DEFAULT_FLOOR, clip=False):
    """ATT correction with the weighted treated fraction in the denominator.

    The same weight vector ``w`` is used inside and outside the denominator.
    """
    n = data.n
    w = _weights(w)
    if w.size != n:
        raise ShapeError("weight vector length does not match data")
    pi, _ = guard_propensity(_row(pi, n), upper=1.0 - floor, clip=clip)
    return _att_value(pi, _row(mu0, n), data, w)


def att_ee_residual(chi, pi, mu0, data, w, floor=DEFAULT_FLOOR, clip=False):
    """Weighted estimating equation of the ATT evaluated at ``chi``."""
    n = data.n
    w = _weights(w)
    pi, _ = guard_propensity(_row(pi, n), upper=1.0 - floor, clip=clip)
    mu0 = _row(mu0, n)
    pa = _treated_fraction(data, w)
    a = data.a.astype(float)
    terms = (a - pi) * (data.y - mu0) / (pa * (1.0 - pi)) - a * chi / pa
    return float(w @ terms)


def actt_plugin(pi, mu0, mu1):
    """``Q_n[pi (mu1 - mu0)] / Q_n[pi]`` over the empirical covariates."""
    qpi = float(np.mean(pi))
    if not qpi > 0:
        raise DegenerateError("mean propensity over the covariates is zero")
    return float(np.mean(pi * (mu1 - mu0))) / qpi


def _actt_value(pi, mu0, mu1, data, w):
    theta = actt_plugin(pi, mu0, mu1)
    pa = _treated_fraction(data, w)
    a = data.a.astype(float)
    mu_a = np.where(data.a == 1, mu1, mu0)
    outcome = (a / pa - (1.0 - a) * pi / (pa * (1.0 - pi))) * (data.y - mu_a)
    assignment = (a - pi) / pa * (mu1 - mu0 - theta)
    return theta + float(w @ outcome) + float(w @ assignment)


def actt_corrected(pi, mu0, mu1, data, w, floor=DEFAULT_FLOOR, clip=False):
    """ACTT correction: ATT-style terms with the covariate fluctuation removed.

    The plug-in averages over the empirical covariate distribution, and the
    weighted treated fraction replaces P[A] throughout.
    """
    n = data.n
    pi, _ = guard_propensity(_row(pi, n), upper=1.0 - floor, clip=clip)
    return _actt_value(pi, _row(mu0, n), _row(mu1, n), data, _weights(w))


def _cate_value(pi, mu0, mu1, data, w):
    a = data.a.astype(float)
    mu_a = np.where(data.a == 1, mu1, mu0)
    theta = float(np.mean(mu1 - mu0))
    return theta + float(w @ ((a / pi - (1.0 - a) / (1.0 - pi)) * (data.y - mu_a)))


def cate_corrected(pi, mu0, mu1, data, w, floor=DEFAULT_FLOOR, clip=False):
    """``Q_n[mu1 - mu0] + P~[(A/pi - (1-A)/(1-pi)) (Y - mu_A)]``."""
    n = data.n
    pi, _ = guard_propensity(_row(pi, n), lower=floor, upper=1.0 - floor, clip=clip)
    return _cate_value(pi, _row(mu0, n), _row(mu1, n), data, _weights(w))


def _draw_count(*nuis):
    counts = {_values(v).shape[0] for v in nuis}
    if len(counts) != 1:
        raise ShapeError(f"nuisance draws disagree on B: {sorted(counts)}")
    return counts.pop()


def _prepare(data, pi, *outcomes, lower=None, upper=None, clip=False):
    piv = _values(pi)
    outs = [_values(v) for v in outcomes]
    _check_cols(data.n, piv, *outs)
    B = _draw_count(piv, *outs)
    piv, clipped = guard_propensity(piv, lower=lower, upper=upper, clip=clip)
    return B, piv, outs


def att_posterior(pi, mu0, data, rng, floor=DEFAULT_FLOOR, clip=False, threads=1):
    B, piv, (m0,) = _prepare(data, pi, mu0, upper=1.0 - floor, clip=clip)
    fn = lambda b, w: _att_value(piv[b], m0[b], data, w.w).chi_tilde  # noqa: E731
    return weighted_posterior(fn, data.n, B, rng, "att", data.fingerprint(), threads)


def actt_posterior(pi, mu0, mu1, data, rng, floor=DEFAULT_FLOOR, clip=False, threads=1):
    B, piv, (m0, m1) = _prepare(data, pi, mu0, mu1, upper=1.0 - floor, clip=clip)
    fn = lambda b, w: _actt_value(piv[b], m0[b], m1[b], data, w.w)  # noqa: E731
    return weighted_posterior(fn, data.n, B, rng, "actt", data.fingerprint(), threads)


def cate_posterior(pi, mu0, mu1, data, rng, floor=DEFAULT_FLOOR, clip=False, threads=1):
    B, piv, (m0, m1) = _prepare(data, pi, mu0, mu1, lower=floor, upper=1.0 - floor, clip=clip)
    fn = lambda b, w: _cate_value(piv[b], m0[b], m1[b], data, w.w)  # noqa: E731
    return weighted_posterior(fn, data.n, B, rng, "cate", data.fingerprint(), threads)
