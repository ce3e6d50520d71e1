"""Posterior draws of nuisance functions evaluated at the data points.

The built-in engine refits a ridge-stabilized GLM under a fresh
Bayesian-bootstrap weight vector for every draw. Externally produced
draws (fitted values from any sampler) come in through the nuisance CSV
format: header ``v_1,...,v_n`` and one row per posterior draw.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .bayes_bootstrap import ROLE_OUTCOME, ROLE_PROPENSITY, draw_weights
from .core import _frozen, csv_text, read_csv_table
from .errors import (
    ConfigError,
    DataError,
    InsufficientDataError,
    NonconvergenceError,
    ParseError,
    ShapeError,
    SingularDesignError,
)

log = logging.getLogger(__name__)

FAMILIES = ("bernoulli-logit", "gaussian-identity")
BASES = ("intercept", "linear", "polynomial")
KINDS = ("propensity", "regression")
LINKS = ("logit", "identity")
TARGETS = ("propensity", "outcome", "outcome_arm0", "outcome_arm1")

_MAX_COND = 1e13


@dataclass(frozen=True)
class NuisanceDraws:
    values: np.ndarray
    kind: str = "regression"
    link: str = "identity"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        if self.link not in LINKS:
            raise ConfigError(f"link must be one of {LINKS}")
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ShapeError("nuisance values must be a non-empty B x n matrix")
        if not np.all(np.isfinite(v)):
            raise DataError("nuisance values must be finite")
        if self.kind == "propensity" and (np.any(v < 0) or np.any(v > 1)):
            raise DataError("propensity values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def B(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class GlmConfig:
    """GLM family, covariate basis and solver settings.

    ``basis="intercept"`` fits a constant, which is how the simulation
    harness builds deliberately misspecified nuisance models.
    """

    family: str = "gaussian-identity"
    basis: str = "linear"
    degree: int = 1
    max_iter: int = 100
    tol: float = 1e-8
    ridge: float = 1e-8

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        if self.basis not in BASES:
            raise ConfigError(f"basis must be one of {BASES}")
        if self.degree < 1:
            raise ConfigError("degree must be >= 1")
        if not self.tol > 0 or self.max_iter < 1 or self.ridge < 0:
            raise ConfigError("need tol > 0, max_iter >= 1 and ridge >= 0")


def design_matrix(x, basis="linear", degree=1):
    """Intercept plus per-column powers of ``x`` (no cross terms)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    cols = [np.ones(x.shape[0])]
    if basis == "linear":
        cols.extend(x.T)
    elif basis == "polynomial":
        for k in range(1, degree + 1):
            cols.extend((x**k).T)
    elif basis != "intercept":
        raise ConfigError(f"unknown basis {basis!r}")
    return np.column_stack(cols)


def _solve(H, g):
    try:
        cond = np.linalg.cond(H)
        if not np.all(np.isfinite(cond)) or np.any(cond > _MAX_COND):
            raise np.linalg.LinAlgError
        return np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        raise SingularDesignError("design is rank deficient beyond what the ridge term rescues") from None


def _check_problem(X, y, w):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size or w.shape[-1] != y.size:
        raise ShapeError("design, response and weights disagree in length")
    if X.shape[1] > X.shape[0]:
        raise InsufficientDataError(f"p = {X.shape[1]} exceeds n = {X.shape[0]}")
    if np.isnan(X).any() or np.isnan(y).any() or np.isnan(w).any():
        raise DataError("NaN in design, response or weights")
    if np.any(w < 0):
        raise DataError("observation weights must be nonnegative")
    total = w.sum(axis=-1)
    if np.any(total <= 0):
        raise DataError("observation weights must have a positive sum")
    # rescale so the weights sum to n: the ridge and tolerance then have the
    # same meaning for Dirichlet weights and for unit weights
    w = w * (y.size / total)[..., None] if w.ndim == 2 else w * (y.size / total)
    return X, y, w


def irls_solve(design, response, obs_weights, cfg=None):
    """Weighted GLM coefficients by iteratively reweighted least squares.

    Maximizes ``sum_i w_i loglik_i - ridge/2 |beta|^2`` with the weights
    rescaled to sum to n. Converged when ``max |score| / n < tol``.
    """
    cfg = cfg or GlmConfig()
    X, y, w = _check_problem(design, response, obs_weights)
    n, p = X.shape
    eye = cfg.ridge * np.eye(p)
    if cfg.family == "gaussian-identity":
        Xw = X * w[:, None]
        return _solve(Xw.T @ X + eye, Xw.T @ y)

    beta = np.zeros(p)
    for _ in range(cfg.max_iter):
        mu = expit(X @ beta)
        score = X.T @ (w * (y - mu)) - cfg.ridge * beta
        if np.max(np.abs(score)) / n < cfg.tol:
            return beta
        Xv = X * (w * mu * (1.0 - mu))[:, None]
        beta = beta + _solve(Xv.T @ X + eye, score)
    mu = expit(X @ beta)
    score = X.T @ (w * (y - mu)) - cfg.ridge * beta
    norm = float(np.max(np.abs(score)) / n)
    if norm < cfg.tol:
        return beta
    raise NonconvergenceError(f"IRLS did not converge in {cfg.max_iter} iterations "
                              f"(max |score|/n = {norm:.3g})", score_norm=norm)


def irls_batch(design, response, weights, cfg=None):
    """:func:`irls_solve` for many weight vectors at once (rows of ``weights``).

    Returns a (B, p) coefficient array.
    """
    cfg = cfg or GlmConfig()
    X, y, W = _check_problem(design, response, np.atleast_2d(weights))
    n, p = X.shape
    B = W.shape[0]
    XX = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    eye = cfg.ridge * np.eye(p)
    if cfg.family == "gaussian-identity":
        H = (W @ XX).reshape(B, p, p) + eye
        g = W @ (X * y[:, None])
        return _batch_solve(H, g)

    beta = np.zeros((B, p))
    active = np.ones(B, dtype=bool)
    for _ in range(cfg.max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return beta
        Wa = W[idx]
        mu = expit(beta[idx] @ X.T)
        score = (Wa * (y - mu)) @ X - cfg.ridge * beta[idx]
        done = np.max(np.abs(score), axis=1) / n < cfg.tol
        active[idx[done]] = False
        keep = ~done
        if not keep.any():
            return beta
        idx, Wa, mu, score = idx[keep], Wa[keep], mu[keep], score[keep]
        H = ((Wa * mu * (1.0 - mu)) @ XX).reshape(idx.size, p, p) + eye
        beta[idx] = beta[idx] + _batch_solve(H, score)
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return beta
    mu = expit(beta[idx] @ X.T)
    score = (W[idx] * (y - mu)) @ X - cfg.ridge * beta[idx]
    norms = np.max(np.abs(score), axis=1) / n
    if np.all(norms < cfg.tol):
        return beta
    worst = float(norms.max())
    raise NonconvergenceError(f"IRLS did not converge in {cfg.max_iter} iterations "
                              f"(max |score|/n = {worst:.3g})", score_norm=worst)


def _batch_solve(H, g):
    cond = np.linalg.cond(H)
    if not np.all(np.isfinite(cond)) or np.any(cond > _MAX_COND):
        raise SingularDesignError("design is rank deficient beyond what the ridge term rescues")
    return np.linalg.solve(H, g[..., None])[..., 0]


def _fit_rows(data, target):
    if target == "propensity":
        return np.ones(data.n, dtype=bool)
    if target == "outcome":
        return data.observed.copy()
    arm = 1 if target == "outcome_arm1" else 0
    return (data.a == arm) & data.observed


def _bb_coefs(X_fit, y_fit, B, rng, cfg, uniform_weights):
    m = X_fit.shape[0]
    p = X_fit.shape[1]
    if m < p + 1:
        raise InsufficientDataError(f"only {m} fitting rows for {p} coefficients")
    if uniform_weights:
        W = np.full((B, m), 1.0 / m)
    else:
        W = np.stack([draw_weights(m, rng.substream(b)).w for b in range(B)])
    return irls_batch(X_fit, y_fit, W, cfg)


def _link_inverse(cfg, eta):
    return expit(eta) if cfg.family == "bernoulli-logit" else eta


def bb_glm_posterior(data, target, cfg=None, B=1000, rng=None, *, learner="s",
                     counterfactual=None, uniform_weights=False):
    """Bayesian-bootstrap GLM posterior of one nuisance function.

    Parameters
    ----------
    data : CausalData
    target : {"propensity", "outcome", "outcome_arm0", "outcome_arm1"}
        ``outcome`` in MAR mode regresses observed ``y`` on ``x``. For
        causal data it is the single-model (S-learner) fit with ``a`` as an
        extra column, evaluated at ``a = counterfactual`` (or at the observed
        ``a`` when None). ``outcome_arm*`` fits one treatment arm only.
    cfg : GlmConfig, optional
        Defaults to a logistic model for the propensity and a Gaussian
        model for outcomes.
    B : int
        Number of posterior draws.
    rng : RngStream
        Root stream; the weight streams are derived under a role id that
        differs from the correction stage.
    uniform_weights : bool
        Use equal weights in every draw (the unweighted fit); for testing.

    Returns
    -------
    NuisanceDraws
        Fitted values (after the inverse link) at all n data points.
    """
    if target not in TARGETS:
        raise ConfigError(f"target must be one of {TARGETS}")
    if rng is None and not uniform_weights:
        raise ConfigError("an explicit RNG stream is required")
    if cfg is None:
        cfg = GlmConfig(family="bernoulli-logit" if target == "propensity" else "gaussian-identity")
    if B < 1:
        raise ConfigError("B must be >= 1")
    if learner not in ("s", "t"):
        raise ConfigError("learner must be 's' or 't'")

    base = design_matrix(data.x, cfg.basis, cfg.degree)
    rows = _fit_rows(data, target)
    if target == "propensity":
        response = data.a.astype(float)
        X_eval = base
        role = ROLE_PROPENSITY
        kind, link = "propensity", "logit"
        if cfg.family != "bernoulli-logit":
            raise ConfigError("propensity models need the bernoulli-logit family")
    else:
        response = np.where(data.observed, data.y, 0.0)
        role = ROLE_OUTCOME
        kind, link = "regression", "logit" if cfg.family == "bernoulli-logit" else "identity"
        if target == "outcome" and not data.mar:
            arm = data.a if counterfactual is None else np.full(data.n, int(counterfactual))
            X_eval = np.column_stack([base, arm])
            base = np.column_stack([base, data.a])
        else:
            X_eval = base
    stream = None if rng is None else rng.substream(role, TARGETS.index(target))
    coefs = _bb_coefs(base[rows], response[rows], B, stream, cfg, uniform_weights)
    values = _link_inverse(cfg, coefs @ X_eval.T)
    return NuisanceDraws(values=values, kind=kind, link=link)


def s_learner_posterior(data, cfg=None, B=1000, rng=None, uniform_weights=False):
    """``(mu0, mu1)`` draws from one pooled outcome model per posterior draw."""
    if data.mar:
        raise DataError("S-learner outcome models need causal (non-MAR) data")
    cfg = cfg or GlmConfig()
    base = design_matrix(data.x, cfg.basis, cfg.degree)
    X = np.column_stack([base, data.a])
    stream = None if rng is None else rng.substream(ROLE_OUTCOME, TARGETS.index("outcome"))
    coefs = _bb_coefs(X, data.y, B, stream, cfg, uniform_weights)
    link = "logit" if cfg.family == "bernoulli-logit" else "identity"
    out = []
    for arm in (0, 1):
        Xe = np.column_stack([base, np.full(data.n, arm)])
        out.append(NuisanceDraws(_link_inverse(cfg, coefs @ Xe.T), "regression", link))
    return tuple(out)


def outcome_posteriors(data, cfg=None, B=1000, rng=None, learner="s"):
    """``(mu0, mu1)`` via the pooled S-learner or two per-arm T-learner fits."""
    if learner == "s":
        return s_learner_posterior(data, cfg, B, rng)
    if learner != "t":
        raise ConfigError("learner must be 's' or 't'")
    mu0 = bb_glm_posterior(data, "outcome_arm0", cfg, B, rng)
    mu1 = bb_glm_posterior(data, "outcome_arm1", cfg, B, rng)
    return mu0, mu1


# --- CSV interchange ---------------------------------------------------------------


def nuisance_csv_text(draws):
    header = [f"v_{i + 1}" for i in range(draws.n)]
    return csv_text(header, draws.values)


def load_nuisance_csv(path, kind="regression", link="identity"):
    header, table = read_csv_table(path)
    expected = [f"v_{i + 1}" for i in range(len(header))]
    if header != expected:
        raise ParseError("header must be v_1,...,v_n", path=path, line=1)
    if table.shape[0] < 1:
        raise ParseError("no posterior draws in file", path=path, line=2)
    bad = np.argwhere(~np.isfinite(table))
    if bad.size:
        raise ParseError("missing or non-finite value", path=path, line=int(bad[0, 0]) + 2)
    if kind == "propensity":
        out = np.argwhere((table < 0) | (table > 1))
        if out.size:
            raise DataError(f"{path}:{int(out[0, 0]) + 2}: propensity value outside [0, 1]")
    return NuisanceDraws(values=table, kind=kind, link=link)
