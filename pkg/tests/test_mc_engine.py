import numpy as np
import pytest

from hypochain.errors import SimulationError
from hypochain.flow_scaling import solve_theta
from hypochain.limit_gaussian import build_limit_model, build_Q
from hypochain.mc_engine import SimConfig, path_normals, residuals, simulate_joint_N, simulate_paths
from hypochain.model_registry import ChainedSystem, CoefficientField, bs_asian, kolmogorov_linear


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(t=1.0, n_paths=10, steps=8)
    with pytest.raises(ValueError):
        SimConfig(t=0.0, n_paths=10)
    with pytest.raises(ValueError):
        SimConfig(t=1.0, n_paths=10, record=("bogus",))
    with pytest.raises(ValueError):
        SimConfig(t=1.0, n_paths=10, scheme="milstein")


def test_kolmogorov_covariance():
    cfg = SimConfig(t=1.0, n_paths=200_000, steps=64, seed=5)
    X = simulate_paths(kolmogorov_linear(), cfg).terminal()
    cov = np.cov(X.T)
    assert cov == pytest.approx(np.array([[1.0, 0.5], [0.5, 1 / 3]]), rel=0.02)


def test_zero_sigma_reproduces_theta():
    base = bs_asian(100.0, 0.05, 0.2, convention="stratonovich")
    zero = CoefficientField(lambda t, x: np.zeros(np.shape(x)[:-1] + (1, 1)), (1, 1),
                            jac=lambda t, x, l: np.zeros(np.shape(x)[:-1] + (1, 1, 1)))
    sysm = ChainedSystem(2, 1, base.xi, base.drifts, zero)
    cfg = SimConfig(t=0.5, n_paths=10, steps=256)
    X = simulate_paths(sysm, cfg).terminal()
    th = solve_theta(sysm, 0.5)
    assert np.max(np.abs(X - th.terminal)) / np.max(np.abs(th.terminal)) < 1e-4


def test_bs_terminal_mean():
    cfg = SimConfig(t=1.0, n_paths=100_000, steps=64, seed=1)
    X = simulate_paths(bs_asian(100.0, 0.05, 0.2), cfg).terminal()
    exact = 100 * np.exp(0.05)
    se = X[:, 0].std() / np.sqrt(len(X))
    assert abs(X[:, 0].mean() - exact) < 4 * se + 0.05


def test_joint_N_moments():
    cfg = SimConfig(t=1.0, n_paths=100_000, steps=64, seed=2)
    b = simulate_joint_N(kolmogorov_linear(n=3), cfg)
    N = b.N
    assert np.var(N[:, 0]) == pytest.approx(1.0, rel=0.02)
    assert np.all(np.abs(N.mean(axis=0)) < 0.02)
    assert np.cov(N.T) == pytest.approx(build_Q(3, 1), rel=0.03, abs=2e-3)


def test_residuals_vanish_on_linear_chain():
    sysm = kolmogorov_linear(n=3, couplings=[1.5, 0.5])
    L = build_limit_model(sysm)
    cfg = SimConfig(t=0.5, n_paths=2000, steps=64, seed=3)
    R = residuals(sysm, cfg, L)
    assert np.max(R.l2()) < 1e-12


def test_residuals_need_N():
    sysm = kolmogorov_linear()
    cfg = SimConfig(t=0.5, n_paths=100, steps=16)
    with pytest.raises(ValueError):
        residuals(sysm, cfg, build_limit_model(sysm), batch=simulate_paths(sysm, cfg))


def test_same_seed_same_bits_and_workers():
    sysm = bs_asian()
    cfg = SimConfig(t=0.5, n_paths=5000, steps=32, seed=9, chunk_size=512)
    a = simulate_paths(sysm, cfg).X
    b = simulate_paths(sysm, cfg).X
    c = simulate_paths(sysm, cfg.with_(workers=4)).X
    assert a.tobytes() == b.tobytes() == c.tobytes()
    d = simulate_paths(sysm, cfg.with_(seed=10)).X
    assert not np.array_equal(a, d)


def test_path_streams_independent_of_grouping():
    whole = path_normals(7, 0, 10, 16)
    part = path_normals(7, 4, 3, 16)
    assert np.array_equal(whole[4:7], part)


def test_horizon_and_blowup():
    sysm = kolmogorov_linear(horizon=1.0)
    with pytest.raises(ValueError):
        simulate_paths(sysm, SimConfig(t=2.0, n_paths=10, steps=16))
    base = kolmogorov_linear()
    fast = CoefficientField(lambda t, x: x[..., 0:1] ** 3 * 50, (1,))
    bad = ChainedSystem(2, 1, [1.0, 0.0], (fast, base.drifts[1]), base.sigma)
    with np.errstate(all="ignore"), pytest.raises(SimulationError):
        simulate_paths(bad, SimConfig(t=1.0, n_paths=200, steps=16))


def test_sup_norm_recorded():
    b = simulate_paths(kolmogorov_linear(), SimConfig(t=1.0, n_paths=500, steps=32, record=("sup_norm",)))
    assert b.sup.shape == (500, 2)
    assert np.all(b.sup[:, 0] >= b.sup[:, 1])
    th = solve_theta(kolmogorov_linear(), 1.0, 32)
    assert np.all(b.sup[:, 0] >= np.linalg.norm(b.X - th.terminal, axis=1) - 1e-12)


def test_exports(tmp_path):
    b = simulate_joint_N(kolmogorov_linear(), SimConfig(t=1.0, n_paths=50, steps=16))
    b.to_csv(tmp_path / "s.csv")
    b.to_binary(tmp_path / "s.bin")
    head, *rows = (tmp_path / "s.csv").read_text().splitlines()
    assert head == "X1,X2,N1,N2"
    csv_vals = np.array([[float(v) for v in r.split(",")] for r in rows])
    raw = np.fromfile(tmp_path / "s.bin", dtype="<f8").reshape(50, 4)
    assert np.array_equal(csv_vals, raw)
    assert np.array_equal(raw, b.matrix())


def test_batch_is_read_only():
    b = simulate_paths(kolmogorov_linear(), SimConfig(t=1.0, n_paths=10, steps=16))
    with pytest.raises(ValueError):
        b.X[0, 0] = 1.0
