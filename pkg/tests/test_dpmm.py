import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from onestep.bayes_bootstrap import RngStream
from onestep.core import UnivariateData, summarize
from onestep.dpmm import (
    DpmmConfig,
    MixtureDraw,
    density_at,
    density_matrix,
    fit,
    fit_chains,
    load_mixture_csv,
    mixture_csv_text,
)
from onestep.errors import ConfigError, DataError, DomainError, ParseError
from onestep.functionals import isd_chi


def test_density_standard_normal_mode():
    mix = MixtureDraw(weights=[1.0], atoms=[0.0], sigma=1.0)
    assert density_at(mix, np.array([0.0]))[0] == pytest.approx(1 / np.sqrt(2 * np.pi), rel=1e-14)


def test_density_symmetric_pair():
    a, s = 1.3, 0.8
    mix = MixtureDraw(weights=[0.5, 0.5], atoms=[-a, a], sigma=s)
    phi = np.exp(-0.5 * (a / s) ** 2) / (s * np.sqrt(2 * np.pi))
    assert density_at(mix, np.array([0.0]))[0] == pytest.approx(phi, rel=1e-14)


@given(st.integers(0, 2**32))
def test_density_integrates_to_one(seed):
    gen = np.random.default_rng(seed)
    H = int(gen.integers(1, 10))
    mix = MixtureDraw(weights=gen.dirichlet(np.ones(H)), atoms=gen.normal(0, 3, H), sigma=gen.uniform(0.1, 2))
    grid = np.linspace(mix.atoms.min() - 12 * mix.sigma, mix.atoms.max() + 12 * mix.sigma, 40001)
    assert abs(np.trapezoid(density_at(mix, grid), grid) - 1) < 1e-6


@given(st.integers(0, 2**32))
def test_density_label_symmetry(seed):
    gen = np.random.default_rng(seed)
    H = 6
    mix = MixtureDraw(weights=gen.dirichlet(np.ones(H)), atoms=gen.normal(0, 3, H), sigma=0.5)
    p = gen.permutation(H)
    other = MixtureDraw(weights=mix.weights[p], atoms=mix.atoms[p], sigma=0.5)
    z = gen.normal(0, 4, 20)
    np.testing.assert_allclose(density_at(mix, z), density_at(other, z), rtol=1e-13)


def test_density_far_tail_is_finite():
    mix = MixtureDraw(weights=[0.3, 0.7], atoms=[0.0, 1.0], sigma=0.05)
    v = density_at(mix, np.array([40.0, -40.0, 0.5]))
    assert np.all(np.isfinite(v)) and np.all(v >= 0)


def test_mixture_draw_invariants():
    with pytest.raises(DomainError):
        MixtureDraw(weights=[0.5, 0.6], atoms=[0, 1], sigma=1)
    with pytest.raises(DomainError):
        MixtureDraw(weights=[1.0], atoms=[0.0], sigma=0.0)
    with pytest.raises(DomainError):
        MixtureDraw(weights=[1.0], atoms=[0.0, 1.0], sigma=1.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        DpmmConfig(truncation=1)
    with pytest.raises(ConfigError):
        DpmmConfig(mass=0)


def test_truncation_tail_mass():
    cfg = DpmmConfig()
    assert (cfg.mass / (cfg.mass + 1)) ** cfg.truncation < 1e-9


def test_tiny_fit_smoke():
    cfg = DpmmConfig(burn_in=25, keep=25)
    draws = fit(UnivariateData([-1.0, 1.0]), cfg, RngStream(1))
    assert len(draws) == 25
    for d in draws:
        assert d.H == 30 and abs(d.weights.sum() - 1) <= 1e-10 and d.sigma > 0


def test_fit_needs_two_points():
    with pytest.raises(DataError):
        fit(UnivariateData([0.3]), DpmmConfig(burn_in=1, keep=1), RngStream(1))


def test_fit_deterministic_and_thinned():
    data = UnivariateData(np.random.default_rng(0).laplace(size=80))
    cfg = DpmmConfig(burn_in=30, keep=20, thin=3)
    a = fit(data, cfg, RngStream(5))
    b = fit(data, cfg, RngStream(5))
    assert len(a) == 20
    assert all(np.array_equal(x.atoms, y.atoms) and x.sigma == y.sigma for x, y in zip(a, b))
    c = fit_chains(data, cfg, [RngStream(5), RngStream(6)])
    assert len(c) == 40 and c[0].sigma == a[0].sigma


def kde_isd(z):
    # Gaussian kernel density estimate with Silverman bandwidth, squared and integrated
    h = 1.06 * z.std() * z.size ** (-0.2)
    grid = np.linspace(z.min() - 6, z.max() + 6, 8001)
    f = np.exp(-0.5 * ((grid[:, None] - z) / h) ** 2).sum(axis=1) / (z.size * h * np.sqrt(2 * np.pi))
    return np.trapezoid(f * f, grid)


def test_isd_posterior_near_kde_oracle():
    z = np.random.default_rng(31).standard_normal(1000)
    draws = fit(UnivariateData(z), DpmmConfig(burn_in=500, keep=500), RngStream(31))
    post = np.mean([isd_chi(d) for d in draws])
    oracle = kde_isd(z)
    assert 0.9 * oracle <= post <= 1.1 * oracle


def test_isd_posterior_concentrates():
    z = np.random.default_rng(32).standard_normal(2000)
    draws = fit(UnivariateData(z), DpmmConfig(burn_in=500, keep=500), RngStream(32))
    s = summarize(np.array([isd_chi(d) for d in draws]))
    assert s.length < 0.1
    assert s.lower - 0.03 <= 1 / (2 * np.sqrt(np.pi)) <= s.upper + 0.03


def test_density_matrix_shape():
    mixes = [MixtureDraw(weights=[1.0], atoms=[m], sigma=1.0) for m in (0.0, 1.0, 2.0)]
    out = density_matrix(mixes, np.array([0.0, 1.0]))
    assert out.shape == (3, 2)
    assert out[1, 1] == pytest.approx(1 / np.sqrt(2 * np.pi))


def test_mixture_csv_roundtrip(tmp_path):
    data = UnivariateData(np.random.default_rng(1).normal(size=30))
    draws = fit(data, DpmmConfig(burn_in=5, keep=4), RngStream(2))
    p = tmp_path / "m.csv"
    p.write_text(mixture_csv_text(draws))
    header = p.read_text().splitlines()[0].split(",")
    assert header[0] == "sigma" and header[1] == "w_1" and header[31] == "mu_1" and len(header) == 61
    back = load_mixture_csv(p)
    assert all(np.array_equal(a.weights, b.weights) and np.array_equal(a.atoms, b.atoms)
               and a.sigma == b.sigma for a, b in zip(draws, back))
    p.write_text("sigma,w_1,mu_1\n1,0.5,0\n")
    with pytest.raises(ParseError, match=":2"):
        load_mixture_csv(p)
