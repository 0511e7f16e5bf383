import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypochain.errors import NumericalError
from hypochain.flow_scaling import (
    degree,
    degree_multi,
    degrees,
    rescale,
    scaling_diagonal,
    scaling_logdet,
    scaling_matrix,
    solve_theta,
    unrescale,
)
from hypochain.model_registry import ChainedSystem, CoefficientField, bs_asian, kolmogorov_linear


def test_degrees_examples():
    assert [degree(h, 1) for h in (1, 2, 3)] == [1, 3, 5]
    assert degree(3, 2) == 3
    assert degree_multi((1, 2), 1) == 4
    assert degree_multi((), 1) == 0


def test_degree_out_of_range():
    with pytest.raises(ValueError):
        degree(0, 1)
    with pytest.raises(ValueError):
        degree(5, 2, nd=4)


@pytest.mark.parametrize("n", range(1, 5))
@pytest.mark.parametrize("d", range(1, 4))
def test_degree_properties_and_det(n, d):
    g = degrees(n, d)
    assert np.all(np.diff(g) >= 0)
    assert np.all(g % 2 == 1)
    assert g.sum() == n * n * d
    for t in (0.001, 0.3, 2.0):
        diag = scaling_diagonal(t, n, d)
        assert np.sum(np.log(diag)) == pytest.approx(scaling_logdet(t, n, d))
        assert np.prod(diag) == pytest.approx(t ** (n * n * d / 2), rel=1e-12)


def test_scaling_commutes_with_block_diagonal():
    n, d = 3, 2
    rng = np.random.default_rng(1)
    M = np.zeros((n * d, n * d))
    for j in range(n):
        M[j * d:(j + 1) * d, j * d:(j + 1) * d] = rng.normal(size=(d, d))
    T = scaling_matrix(0.37, n, d)
    assert np.allclose(T @ M, M @ T)


def test_scaling_rejects_nonpositive_t():
    with pytest.raises(ValueError):
        scaling_diagonal(0.0, 2, 1)
    with pytest.raises(ValueError):
        rescale(-1.0, np.zeros(2), np.zeros((1, 2)), 1)


def test_rescale_examples():
    assert np.all(rescale(0.5, np.ones(2), np.ones((3, 2)), 1) == 0)
    z = rescale(0.01, np.zeros(2), np.array([[0.1, 0.001]]), 1)
    assert z == pytest.approx(np.array([[1.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1.0), st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
def test_rescale_round_trip(t, vals):
    theta = np.array([1.0, -2.0, 0.5, 3.0])
    x = np.array(vals)
    back = unrescale(t, theta, rescale(t, theta, x, 2), 2)
    assert np.allclose(back, x, rtol=1e-12, atol=1e-9)


def test_theta_bs_closed_form():
    sysm = bs_asian(100.0, 0.05, 0.2, convention="stratonovich")
    th = solve_theta(sysm, 0.25)
    exact = np.array([100 * math.exp(0.0125), 100 * (math.exp(0.0125) - 1) / 0.05])
    assert np.max(np.abs(th.terminal - exact)) <= 1e-8
    assert np.array_equal(th.values[0], sysm.xi)


def test_theta_zero_rate():
    th = solve_theta(bs_asian(100.0, 0.0, 0.2, convention="stratonovich"), 0.4)
    assert th.terminal == pytest.approx([100.0, 40.0], abs=1e-12)


def test_theta_zero_drift_is_constant():
    sysm = kolmogorov_linear(xi=[0.0, 2.0])
    th = solve_theta(sysm, 1.0)
    assert np.all(th.values == sysm.xi)


def test_rk4_fourth_order():
    sysm = bs_asian(100.0, 0.8, 0.2, convention="stratonovich")
    t = 1.0
    exact = np.array([100 * math.exp(0.8), 100 * (math.exp(0.8) - 1) / 0.8])
    errs = [np.max(np.abs(solve_theta(sysm, t, s).terminal - exact)) for s in (8, 16, 32)]
    for a, b in zip(errs, errs[1:]):
        assert 8.0 <= a / b <= 32.0


def test_theta_steps_and_horizon_checks():
    sysm = kolmogorov_linear()
    with pytest.raises(ValueError):
        solve_theta(sysm, 0.5, steps=4)
    with pytest.raises(ValueError):
        solve_theta(sysm, 2.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_theta_blow_up_reports_time():
    base = kolmogorov_linear()
    fast = CoefficientField(lambda t, x: x[..., 0:1] ** 2, (1,))
    sysm = ChainedSystem(2, 1, [1.0, 0.0], (fast, base.drifts[1]), base.sigma, horizon=2.0)
    with pytest.raises(NumericalError, match="t = "):
        solve_theta(sysm, 2.0, steps=64)


def test_theta_cache_and_csv(tmp_path):
    sysm = bs_asian()
    a = solve_theta(sysm, 0.5)
    assert solve_theta(sysm, 0.5) is a
    p = tmp_path / "theta.csv"
    a.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "t,theta_1,theta_2"
    assert len(rows) == a.steps + 2
    assert float(rows[-1].split(",")[1]) == a.terminal[0]
