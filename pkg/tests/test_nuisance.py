import numpy as np
import pytest
from scipy.special import expit

from onestep.bayes_bootstrap import RngStream, draw_weights
from onestep.core import CausalData
from onestep.errors import (
    ConfigError,
    DataError,
    InsufficientDataError,
    NonconvergenceError,
    ParseError,
    SingularDesignError,
)
from onestep.nuisance import (
    GlmConfig,
    NuisanceDraws,
    bb_glm_posterior,
    design_matrix,
    irls_batch,
    irls_solve,
    load_nuisance_csv,
    nuisance_csv_text,
    outcome_posteriors,
    s_learner_posterior,
)

GAUSS = GlmConfig(family="gaussian-identity")
LOGIT = GlmConfig(family="bernoulli-logit")


def test_gaussian_intercept_mean():
    beta = irls_solve(np.ones((3, 1)), [1.0, 2.0, 3.0], np.ones(3), GAUSS)
    assert beta[0] == pytest.approx(2.0, abs=1e-7)


def test_gaussian_zero_weight_exclusion():
    beta = irls_solve(np.ones((3, 1)), [5.0, 9.0, 9.0], [1.0, 0.0, 0.0], GAUSS)
    assert beta[0] == pytest.approx(5.0, abs=1e-7)


def test_gaussian_matches_normal_equations():
    gen = np.random.default_rng(0)
    X = np.column_stack([np.ones(200), gen.normal(size=(200, 3))])
    y = X @ [1.0, -2.0, 0.5, 3.0] + gen.normal(size=200)
    w = gen.exponential(size=200)
    ref = np.linalg.solve((X * w[:, None]).T @ X, (X * w[:, None]).T @ y)
    beta = irls_solve(X, y, w, GAUSS)
    np.testing.assert_allclose(beta, ref, rtol=1e-8)


def test_logistic_consistency_on_exact_probabilities():
    x = np.linspace(-2, 2, 10_000)
    X = np.column_stack([np.ones_like(x), x])
    beta = irls_solve(X, expit(1 + 2 * x), np.ones_like(x), LOGIT)
    assert np.all(np.abs(beta - [1.0, 2.0]) < 0.1)


def test_logistic_score_is_small_at_solution():
    gen = np.random.default_rng(1)
    x = gen.normal(size=500)
    X = np.column_stack([np.ones_like(x), x])
    y = (gen.random(500) < expit(0.3 - x)).astype(float)
    w = gen.exponential(size=500)
    cfg = LOGIT
    beta = irls_solve(X, y, w, cfg)
    ws = w * 500 / w.sum()
    score = X.T @ (ws * (y - expit(X @ beta))) - cfg.ridge * beta
    assert np.max(np.abs(score)) / 500 < cfg.tol


def test_batch_matches_single():
    gen = np.random.default_rng(2)
    n = 300
    X = design_matrix(gen.random((n, 2)), "polynomial", 2)
    ylog = (gen.random(n) < 0.4).astype(float)
    ygau = gen.normal(size=n)
    W = np.stack([draw_weights(n, RngStream(3).substream(b)).w for b in range(12)])
    for cfg, y in ((LOGIT, ylog), (GAUSS, ygau)):
        batch = irls_batch(X, y, W, cfg)
        single = np.stack([irls_solve(X, y, w, cfg) for w in W])
        np.testing.assert_allclose(batch, single, rtol=1e-7, atol=1e-9)


def test_nonconvergence_reports_score():
    x = np.linspace(-1, 1, 50)
    X = np.column_stack([np.ones_like(x), x])
    y = (x > 0).astype(float)
    with pytest.raises(NonconvergenceError) as exc:
        irls_solve(X, y, np.ones(50), GlmConfig(family="bernoulli-logit", max_iter=2))
    assert exc.value.score_norm > 0


def test_singular_design():
    X = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(SingularDesignError):
        irls_solve(X, np.arange(10.0), np.ones(10), GlmConfig(family="gaussian-identity", ridge=0.0))


def test_problem_validation():
    with pytest.raises(InsufficientDataError):
        irls_solve(np.ones((2, 3)), [1.0, 2.0], [1.0, 1.0], GAUSS)
    with pytest.raises(DataError):
        irls_solve(np.ones((2, 1)), [1.0, np.nan], [1.0, 1.0], GAUSS)
    with pytest.raises(DataError):
        irls_solve(np.ones((2, 1)), [1.0, 2.0], [0.0, 0.0], GAUSS)
    with pytest.raises(ConfigError):
        GlmConfig(tol=0)


def logistic_data(n, seed):
    gen = np.random.default_rng(seed)
    x = gen.random(n)
    pi0 = expit(-0.5 + 2 * x)
    a = (gen.random(n) < pi0).astype(int)
    y = 1 + x + a * (1 + x) + gen.normal(size=n)
    return CausalData(x=x[:, None], a=a, y=y), pi0


def test_uniform_weights_reproduce_mle():
    data, _ = logistic_data(400, 4)
    d = bb_glm_posterior(data, "propensity", LOGIT, B=1, uniform_weights=True)
    beta = irls_solve(design_matrix(data.x), data.a, np.ones(data.n), LOGIT)
    np.testing.assert_allclose(d.values[0], expit(design_matrix(data.x) @ beta), rtol=1e-10)


def test_propensity_posterior_tracks_truth(rng):
    data, pi0 = logistic_data(2000, 5)
    d = bb_glm_posterior(data, "propensity", LOGIT, B=200, rng=rng)
    assert np.all((d.values > 0) & (d.values < 1))
    assert np.sqrt(np.mean((d.values.mean(axis=0) - pi0) ** 2)) < 0.05
    assert np.all(d.values.var(axis=0) > 0)


def test_posterior_deterministic(rng):
    data, _ = logistic_data(200, 6)
    a = bb_glm_posterior(data, "propensity", LOGIT, B=5, rng=rng).values
    b = bb_glm_posterior(data, "propensity", LOGIT, B=5, rng=rng).values
    assert a.tobytes() == b.tobytes()


def test_learners(rng):
    data, _ = logistic_data(600, 7)
    mu0, mu1 = s_learner_posterior(data, GAUSS, 10, rng)
    # pooled linear model: the fitted effect is the same at every x
    diff = mu1.values - mu0.values
    assert np.allclose(diff, diff[:, :1])
    t0, t1 = outcome_posteriors(data, GAUSS, 10, rng, learner="t")
    assert np.mean(t1.values - t0.values) == pytest.approx(1.5, abs=0.3)
    cf = bb_glm_posterior(data, "outcome", GAUSS, 10, rng, counterfactual=1)
    np.testing.assert_allclose(cf.values, mu1.values)


def test_mar_outcome_uses_observed_rows_only(rng):
    gen = np.random.default_rng(8)
    x = gen.random(300)
    a = (gen.random(300) < 0.7).astype(int)
    y = np.where(a == 1, 2 + x, np.nan)
    data = CausalData(x=x[:, None], a=a, y=y, mar=True)
    m = bb_glm_posterior(data, "outcome", GAUSS, 3, rng)
    np.testing.assert_allclose(m.values, np.tile(2 + x, (3, 1)), atol=1e-6)


def test_insufficient_fitting_rows(rng):
    data = CausalData(x=[[0.1], [0.2], [0.3], [0.4]], a=[1, 0, 0, 0], y=[1.0, 2.0, 3.0, 4.0])
    with pytest.raises(InsufficientDataError):
        bb_glm_posterior(data, "outcome_arm1", GAUSS, 2, rng)


def test_nuisance_csv(tmp_path):
    d = NuisanceDraws(np.array([[0.1, 0.2, 1 / 3], [0.4, 0.5, 0.6]]), "propensity", "logit")
    p = tmp_path / "pi.csv"
    p.write_text(nuisance_csv_text(d))
    back = load_nuisance_csv(p, "propensity", "logit")
    assert back.values.shape == (2, 3) and np.array_equal(back.values, d.values)
    p.write_text("v_1,v_2,v_3\n0.1,0.2,0.3\n0.1,0.2\n")
    with pytest.raises(ParseError, match=":3"):
        load_nuisance_csv(p)
    p.write_text("v_1,v_2\n0.1,1.2\n")
    with pytest.raises(DataError):
        load_nuisance_csv(p, "propensity", "logit")
