"""Synthetic data generators, the Monte Carlo coverage harness and diagnostics."""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit

from . import dpmm
from .bayes_bootstrap import (
    ROLE_CORRECTION,
    ROLE_DATA,
    ROLE_DPMM,
    ROLE_PLUGIN,
    ROLE_REPLICATE,
    InfluenceMatrix,
    RngStream,
    map_rows,
    one_step_posterior,
    weighted_posterior,
)
from .core import CausalData, CorrectedDraws, UnivariateData, covers, summarize
from .errors import ConfigError, DegenerateError, ExperimentAbort, InsufficientDrawsError, OnestepError
from .functionals import (
    actt_plugin,
    actt_posterior,
    att_posterior,
    isd_influence,
    mar_influence,
)
from .nuisance import GlmConfig, bb_glm_posterior, outcome_posteriors

log = logging.getLogger(__name__)

SCENARIOS = ("laplace_isd", "mar_synthetic", "att_synthetic")
METHODS = ("corrected", "uncorrected", "both")
LAPLACE_ISD = 0.25
MAR_TRUTH = 1.0 / 3.0


def _gen(rng):
    return rng.generator() if isinstance(rng, RngStream) else rng


# --- data generators --------------------------------------------------------------


def laplace_from_uniform(u):
    """Inverse CDF of Laplace(0, 1)."""
    u = np.asarray(u, dtype=float)
    c = u - 0.5
    return -np.sign(c) * np.log1p(-2.0 * np.abs(c))


def laplace_density(z):
    return 0.5 * np.exp(-np.abs(z))


def gen_laplace(n, rng):
    if n < 1:
        raise ConfigError("n must be >= 1")
    return UnivariateData(laplace_from_uniform(_gen(rng).random(int(n))))


def mar_propensity(x):
    return expit(0.5 + 1.5 * x)


def gen_mar(n, options=None, rng=None):
    """X ~ U(0,1), response propensity expit(0.5 + 1.5x), Y | X ~ N(x^2, 1).

    Returns ``(CausalData, 1/3)``; unobserved outcomes are flagged missing.
    """
    if n < 10:
        raise ConfigError("n must be >= 10")
    g = _gen(rng)
    x = g.random(n)
    a = (g.random(n) < mar_propensity(x)).astype(int)
    y = x**2 + g.standard_normal(n)
    y = np.where(a == 1, y, np.nan)
    return CausalData(x=x[:, None], a=a, y=y, mar=True), MAR_TRUTH


def att_propensity(x):
    return expit(-0.5 + x)


def att_effect(x, options=None):
    options = options or {}
    if options.get("homogeneous", True):
        return np.full(np.shape(x), float(options.get("tau0", 2.0)))
    return 1.0 + np.sin(2.0 * np.pi * np.asarray(x))


def att_truth(options=None, points=1_000_000):
    """``E[tau(X) | A = 1]`` by midpoint quadrature on [0, 1]."""
    options = options or {}
    if options.get("homogeneous", True):
        return float(options.get("tau0", 2.0))
    x = (np.arange(points) + 0.5) / points
    pi = att_propensity(x)
    return float(np.sum(att_effect(x, options) * pi) / np.sum(pi))


def gen_att(n, options=None, rng=None):
    """X ~ U(0,1), A ~ Bern(expit(x - 0.5)), Y = 1 + x + A tau(x) + N(0,1)."""
    if n < 10:
        raise ConfigError("n must be >= 10")
    options = options or {}
    g = _gen(rng)
    x = g.random(n)
    a = (g.random(n) < att_propensity(x)).astype(int)
    y = 1.0 + x + a * att_effect(x, options) + g.standard_normal(n)
    return CausalData(x=x[:, None], a=a, y=y), att_truth(options)


# --- diagnostics --------------------------------------------------------------------


def ks_normality(draws):
    """Kolmogorov-Smirnov distance of standardized draws from N(0, 1)."""
    v = draws.values if isinstance(draws, CorrectedDraws) else np.asarray(draws, float).ravel()
    if v.size < 50:
        raise InsufficientDrawsError(f"ks_normality needs B >= 50, got {v.size}")
    sd = np.std(v, ddof=1)
    if not sd > 0:
        raise DegenerateError("draws have zero standard deviation")
    return float(stats.kstest((v - v.mean()) / sd, "norm").statistic)


def l2_distance_sq(mix, reference="laplace"):
    """Squared L2 distance between a mixture density and the reference density."""
    if reference != "laplace":
        raise ConfigError(f"unknown reference density {reference!r}")
    grid = np.linspace(-20.0, 20.0, 40001)
    diff = dpmm.density_at(mix, grid) - laplace_density(grid)
    return float(np.trapezoid(diff * diff, grid))


# --- experiment runner -----------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo study.

    ``options`` holds scenario switches: for ``mar_synthetic``,
    ``misspecify`` in {"none", "outcome", "propensity"} (the misspecified
    model is intercept-only); for ``att_synthetic``, ``homogeneous``,
    ``tau0`` and ``learner`` ("s" by default, or "t"). ``dpmm`` overrides DPMM settings
    (``keep`` is always ``B``).
    """

    scenario: str
    n: int
    reps: int = 200
    B: int = 2000
    seed: int = 0
    methods: str = "both"
    level: float = 0.95
    options: dict = field(default_factory=dict)
    dpmm: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if self.methods not in METHODS:
            raise ConfigError(f"methods must be one of {METHODS}")
        if self.n < 10:
            raise ConfigError("n must be >= 10")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.B < 2:
            raise ConfigError("B must be >= 2 to form intervals")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.scenario == "mar_synthetic":
            mis = self.options.get("misspecify", "none")
            if mis not in ("none", "outcome", "propensity"):
                raise ConfigError("misspecify must be 'none', 'outcome' or 'propensity'")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class MetricsRow:
    method: str
    bias: float
    mae: float
    rmse: float
    coverage: float
    interval_length: float

    def to_dict(self):
        return asdict(self)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    per_replicate: list
    failures: list

    def to_dict(self, include_replicates=True):
        out = {"config": self.config.to_dict(), "rows": [r.to_dict() for r in self.rows]}
        if include_replicates:
            out["per_replicate"] = self.per_replicate
            out["failures"] = self.failures
        return out


def _dpmm_config(cfg):
    return dpmm.DpmmConfig(**{**cfg.dpmm, "keep": cfg.B})


def _laplace_rep(cfg, rng):
    data = gen_laplace(cfg.n, rng.substream(ROLE_DATA))
    draws = dpmm.fit(data, _dpmm_config(cfg), rng.substream(ROLE_DPMM))
    infl = isd_influence(draws, data)
    out = {}
    if cfg.methods in ("uncorrected", "both"):
        out["uncorrected"] = (infl.plugin, LAPLACE_ISD)
    if cfg.methods in ("corrected", "both"):
        out["corrected"] = (one_step_posterior(infl, rng.substream(ROLE_CORRECTION), "isd").values, LAPLACE_ISD)
    return out


def _bb_mean(values, rng):
    """Plug-in draws ``sum_i q_i v_b(x_i)`` with Bayesian-bootstrap covariate weights."""
    infl = InfluenceMatrix(psi=values, plugin=np.zeros(values.shape[0]))
    return one_step_posterior(infl, rng).values


def _mar_rep(cfg, rng):
    data, truth = gen_mar(cfg.n, cfg.options, rng.substream(ROLE_DATA))
    mis = cfg.options.get("misspecify", "none")
    pcfg = GlmConfig(family="bernoulli-logit", basis="intercept" if mis == "propensity" else "linear")
    mcfg = GlmConfig(family="gaussian-identity",
                     basis="intercept" if mis == "outcome" else "polynomial", degree=2)
    m = bb_glm_posterior(data, "outcome", mcfg, cfg.B, rng)
    out = {}
    if cfg.methods in ("corrected", "both"):
        pi = bb_glm_posterior(data, "propensity", pcfg, cfg.B, rng)
        infl = mar_influence(pi, m, data)
        out["corrected"] = (one_step_posterior(infl, rng.substream(ROLE_CORRECTION), "mar_mean").values, truth)
    if cfg.methods in ("uncorrected", "both"):
        out["uncorrected"] = (_bb_mean(m.values, rng.substream(ROLE_PLUGIN)), truth)
    return out


def _att_rep(cfg, rng):
    opts = cfg.options
    data, truth = gen_att(cfg.n, opts, rng.substream(ROLE_DATA))
    basis = opts.get("outcome_basis", "linear")
    ocfg = GlmConfig(family="gaussian-identity", basis=basis, degree=int(opts.get("outcome_degree", 1)))
    pi = bb_glm_posterior(data, "propensity", GlmConfig(family="bernoulli-logit"), cfg.B, rng)
    mu0, mu1 = outcome_posteriors(data, ocfg, cfg.B, rng, learner=opts.get("learner", "s"))
    x = data.x[:, 0]
    pi0 = att_propensity(x)
    actt_truth = float(np.sum(pi0 * att_effect(x, opts)) / np.sum(pi0))
    out = {}
    corr = rng.substream(ROLE_CORRECTION)
    if cfg.methods in ("corrected", "both"):
        out["att_corrected"] = (att_posterior(pi, mu0, data, corr).values, truth)
        out["actt_corrected"] = (actt_posterior(pi, mu0, mu1, data, corr).values, actt_truth)
    if cfg.methods in ("uncorrected", "both"):
        piv, diff = pi.values, mu1.values - mu0.values

        def att_plug(b, q):
            return float(q.w @ (piv[b] * diff[b])) / float(q.w @ piv[b])

        out["att_uncorrected"] = (
            weighted_posterior(att_plug, data.n, cfg.B, rng.substream(ROLE_PLUGIN), "att").values, truth)
        out["actt_uncorrected"] = (
            np.array([actt_plugin(piv[b], mu0.values[b], mu1.values[b]) for b in range(cfg.B)]),
            actt_truth)
    return out


_RUNNERS = {"laplace_isd": _laplace_rep, "mar_synthetic": _mar_rep, "att_synthetic": _att_rep}


def replicate_stream(cfg, r, attempt=0):
    return RngStream(cfg.seed).substream(ROLE_REPLICATE, r, attempt)


def run_replicate(cfg, r, attempt=0):
    """Posterior draws and truths for replicate ``r``: ``{method: (draws, truth)}``."""
    return _RUNNERS[cfg.scenario](cfg, replicate_stream(cfg, r, attempt))


def _summarize_rep(cfg, r, attempt, draws):
    rec = {"rep": r, "attempt": attempt, "methods": {}}
    for method, (values, truth) in draws.items():
        s = summarize(values, cfg.level)
        rec["methods"][method] = {
            "truth": truth, "mean": s.mean, "sd": s.sd, "lower": s.lower,
            "upper": s.upper, "covered": covers(s, truth),
        }
    return rec


def _one_rep(cfg, r):
    failure = None
    for attempt in (0, 1):
        try:
            return _summarize_rep(cfg, r, attempt, run_replicate(cfg, r, attempt)), failure
        except OnestepError as exc:
            log.warning("replicate %d attempt %d failed: %s", r, attempt, exc)
            if failure is not None:
                raise ExperimentAbort(f"replicate {r} failed twice: {failure}; {exc}") from exc
            failure = f"{type(exc).__name__}: {exc}"
    raise AssertionError("unreachable")


def aggregate(records):
    """Table-style metrics per method from per-replicate summaries."""
    methods = list(records[0]["methods"])
    rows = []
    for method in methods:
        recs = [rec["methods"][method] for rec in records]
        err = np.array([m["mean"] - m["truth"] for m in recs])
        rows.append(MetricsRow(
            method=method,
            bias=float(np.mean(err)),
            mae=float(np.median(np.abs(err))),
            rmse=float(math.sqrt(np.mean(err**2))),
            coverage=float(np.mean([m["covered"] for m in recs])),
            interval_length=float(np.mean([m["upper"] - m["lower"] for m in recs])),
        ))
    return rows


def simulate(cfg, threads=1):
    """Run every replicate and aggregate; see :func:`run_experiment`."""
    results = map_rows(lambda r: _one_rep(cfg, r), cfg.reps, threads)
    records = [rec for rec, _ in results]
    failures = [{"rep": rec["rep"], "error": fail} for rec, fail in results if fail]
    if len(failures) > 0.01 * cfg.reps:
        raise ExperimentAbort(
            f"{len(failures)} of {cfg.reps} replicates failed (limit 1%): "
            + "; ".join(f"rep {f['rep']}: {f['error']}" for f in failures[:5])
        )
    return ExperimentResult(config=cfg, rows=aggregate(records), per_replicate=records, failures=failures)


def run_experiment(cfg, threads=1):
    """Monte Carlo study: bias, median absolute error, RMSE, coverage and
    mean interval length of the posterior mean / central interval per method.

    Replicate ``r`` draws from streams keyed by ``(seed, r)``, so the output
    does not depend on ``threads``. A failing replicate is retried once on a
    perturbed stream; more than 1% failures aborts the run.
    """
    return simulate(cfg, threads).rows
