import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hypochain.density_lab import (
    DensityEstimate,
    convergence_experiment,
    derivative_bandwidth,
    diagonal_decay,
    estimate_density,
    fit_envelope,
    linear_gaussian_logpdf,
    loglog_slope,
    mc_mass,
    moment_slopes,
    silverman_bandwidth,
    tail_curve,
)
from hypochain.errors import InsufficientDataError, UnsupportedModelError
from hypochain.flow_scaling import rescale, scaling_logdet, solve_theta
from hypochain.limit_gaussian import build_limit_model, build_Q
from hypochain.mc_engine import SimConfig, simulate_paths
from hypochain.model_registry import kolmogorov_linear, quadratic_asian

Q2 = build_Q(2, 1)


@pytest.fixture(scope="module")
def gauss_1e6():
    rng = np.random.default_rng(20)
    return rng.multivariate_normal(np.zeros(2), Q2, size=1_000_000)


def _kolmogorov_closed_logpdf(t, y, xi=(1.0, 0.0)):
    mean = np.array([xi[0], xi[1] + xi[0] * t])
    cov = np.array([[t, t * t / 2], [t * t / 2, t**3 / 3]])
    return stats.multivariate_normal(mean, cov).logpdf(y)


def test_silverman_rule():
    x = np.random.default_rng(0).normal(size=(10_000, 3)) * [1.0, 2.0, 0.5]
    bw = silverman_bandwidth(x)
    ref = x.std(axis=0, ddof=1) * (4.0 / (5 * 10_000)) ** (1 / 7)
    assert bw == pytest.approx(ref, rel=1e-12)


def test_synthetic_sup_error(gauss_1e6):
    est = DensityEstimate(gauss_1e6, silverman_bandwidth(gauss_1e6), 1.0, np.zeros(2), 2, 1, len(gauss_1e6))
    g = np.linspace(-2, 2, 9)
    pts = np.array([[a, b] for a in g for b in g if a * a + b * b <= 4.0])
    exact = stats.multivariate_normal(np.zeros(2), Q2).pdf(pts)
    err = np.max(np.abs(est.pdf_chi(pts) - exact)) / np.max(exact)
    assert err <= 0.05


def test_synthetic_gradient_minor_axis(gauss_1e6):
    bw = derivative_bandwidth(gauss_1e6)
    est = DensityEstimate(gauss_1e6, bw, 1.0, np.zeros(2), 2, 1, len(gauss_1e6), kernel="richardson")
    vals, vecs = np.linalg.eigh(Q2)
    z = vecs[:, 0] * math.sqrt(vals[0])
    p = stats.multivariate_normal(np.zeros(2), Q2).pdf(z)
    g_exact = -p * np.linalg.solve(Q2, z)
    g = est.grad_chi(z[None, :])[0]
    assert np.linalg.norm(g - g_exact) / np.linalg.norm(g_exact) <= 0.10


def test_mass_is_one():
    x = np.random.default_rng(1).multivariate_normal(np.zeros(2), Q2, size=100_000)
    est = DensityEstimate(x, silverman_bandwidth(x), 1.0, np.zeros(2), 2, 1, len(x))
    assert mc_mass(est, draws=4000, seed=2) == pytest.approx(1.0, abs=0.01)


def test_small_sample_warns():
    with pytest.warns(UserWarning, match="high variance"):
        estimate_density(np.zeros((50, 2)) + np.random.default_rng(0).normal(size=(50, 2)), np.zeros(2), 1.0, 2, 1)


def test_bad_inputs():
    x = np.random.default_rng(0).normal(size=(20_000, 2))
    with pytest.raises(ValueError):
        estimate_density(x, np.zeros(2), 0.0, 2, 1)
    with pytest.raises(ValueError):
        estimate_density(x, np.zeros(2), 1.0, 2, 1, bandwidth="scott")


@pytest.fixture(scope="module")
def small_est():
    x = np.random.default_rng(3).normal(size=(20_000, 2)) * [0.1, 0.01] + [1.0, 0.5]
    return estimate_density(x, np.array([1.0, 0.5]), 0.1, 2, 1)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.03, 0.03))
def test_change_of_variables_identity(small_est, a, b):
    y = np.array([[1.0 + a, 0.5 + b]])
    z = rescale(0.1, small_est.theta_t, y, 1)
    lhs = small_est.pdf_y(y)
    rhs = math.exp(-scaling_logdet(0.1, 2, 1)) * small_est.pdf_chi(z)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    assert np.all(lhs >= 0)


def test_derivatives_match_differences(small_est):
    z = np.array([[0.2, -0.4]])
    h = 1e-4
    g = small_est.grad_chi(z)[0]
    H = small_est.hess_chi(z)[0]
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (small_est.pdf_chi(z + e) - small_est.pdf_chi(z - e))[0] / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-5)
        fdg = (small_est.grad_chi(z + e) - small_est.grad_chi(z - e))[0] / (2 * h)
        assert H[:, k] == pytest.approx(fdg, rel=1e-5, abs=1e-9)


def test_tail_curve_basic():
    x = np.random.default_rng(4).multivariate_normal(np.zeros(2), Q2, size=50_000)
    c = tail_curve(x, np.zeros(2), 1.0, [0.0, 0.5, 1.0, 2.0], 1)
    assert c.prob[0] == 1.0
    assert np.all(np.diff(c.prob) <= 0)
    assert np.all(c.lower <= c.prob) and np.all(c.prob <= c.upper)
    with pytest.raises(ValueError):
        tail_curve(x, np.zeros(2), 1.0, [1.0, 0.5], 1)


def test_tail_curve_matches_exact_gaussian():
    x = np.random.default_rng(5).multivariate_normal(np.zeros(2), Q2, size=200_000)
    levels = np.array([0.25, 0.5, 1.0, 1.5, 2.0])
    c = tail_curve(x, np.zeros(2), 1.0, levels, 1)
    ref = stats.multivariate_normal(np.zeros(2), Q2).rvs(size=2_000_000, random_state=6)
    r = np.linalg.norm(ref, axis=1)
    exact = np.array([np.mean(r >= a) for a in levels])
    assert np.all((c.lower <= exact + 3e-4) & (exact - 3e-4 <= c.upper))


def test_per_block_tails_need_sup():
    b = simulate_paths(kolmogorov_linear(), SimConfig(t=1.0, n_paths=100, steps=16))
    with pytest.raises(ValueError):
        tail_curve(b, np.zeros(2), 1.0, [0.5, 1.0], 1, per_block=True)
    b = simulate_paths(kolmogorov_linear(), SimConfig(t=1.0, n_paths=100, steps=16, record=("sup_norm",)))
    curves = tail_curve(b, np.zeros(2), 1.0, [0.5, 1.0], 1, per_block=True)
    assert len(curves) == 2


def test_envelope_insufficient_data():
    x = np.random.default_rng(7).normal(size=(1000, 2)) * 0.1
    c = tail_curve(x, np.zeros(2), 1.0, np.linspace(5, 10, 12), 1)
    with pytest.raises(InsufficientDataError):
        fit_envelope(c, "gaussian")


def test_envelope_polynomial_passes_on_heavy_tail_gaussian_fails():
    rng = np.random.default_rng(8)
    x = rng.standard_t(2.5, size=(400_000, 1))
    c = tail_curve(x, np.zeros(1), 1.0, np.linspace(0.5, 40, 60), 1)
    assert fit_envelope(c, "polynomial").passed
    assert not fit_envelope(c, "gaussian").passed


def test_loglog_slope_exact():
    t = np.array([0.01, 0.1, 1.0])
    assert loglog_slope(t, 3 * t**1.5).slope == pytest.approx(1.5)


def test_moment_slopes_kolmogorov():
    cfg = SimConfig(t=1.0, n_paths=50_000, steps=64, seed=1)
    sysm = kolmogorov_linear()
    tg = [0.01, 0.1, 1.0]
    assert abs(moment_slopes(sysm, 1, 2, tg, cfg, stacked=False).slope - 0.5) <= 0.05
    assert abs(moment_slopes(sysm, 2, 2, tg, cfg).slope - 1.5) <= 0.1
    with pytest.raises(ValueError):
        moment_slopes(sysm, 1, 2, [0.5, 1.0], cfg)


def test_far_point_flagged():
    sysm = kolmogorov_linear()
    L = build_limit_model(sysm)
    cfg = SimConfig(t=1.0, n_paths=20_000, steps=32, seed=2)
    rows = convergence_experiment(sysm, L, np.array([6.0, 0.0]), [1.0], cfg)
    assert rows[0].flag == "insufficient tail mass"
    rows = convergence_experiment(sysm, L, np.zeros(2), [1.0], cfg)
    assert rows[0].flag == ""


def test_linear_logpdf_closed_form():
    sysm = kolmogorov_linear(xi=[1.0, 0.0])
    for t in (0.5, 0.01, 0.001):
        y = np.array([1.0 + 0.3 * t**0.5, -0.2 * t**1.5])
        assert linear_gaussian_logpdf(sysm, t, y) == pytest.approx(_kolmogorov_closed_logpdf(t, y), rel=1e-10)


def test_diagonal_decay_cases():
    tg = [0.1, 0.01, 0.001]
    res = diagonal_decay(kolmogorov_linear(xi=[1.0, 0.0]), tg)
    assert res.applicable and res.j == 2 and res.passed
    exact = [t * _kolmogorov_closed_logpdf(t, np.array([1.0, 0.0])) for t in tg]
    assert res.values == pytest.approx(exact, rel=1e-10)
    off = diagonal_decay(kolmogorov_linear(), tg)
    assert not off.applicable and "not applicable" in off.reason
    with pytest.raises(UnsupportedModelError):
        diagonal_decay(quadratic_asian(), tg)


def test_theta_used_for_centering():
    sysm = kolmogorov_linear(xi=[1.0, 0.0])
    b = simulate_paths(sysm, SimConfig(t=0.1, n_paths=20_000, steps=32, seed=3))
    th = solve_theta(sysm, 0.1).terminal
    est = estimate_density(b, th, 0.1, 2, 1)
    assert np.abs(est.chi.mean(axis=0)).max() < 0.03
