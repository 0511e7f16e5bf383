"""Asian basket options on a correlated local-volatility model.

The basket S (d assets) and its weighted running integral alpha_t = int w^T S ds
form a two-block chained system. At the money, the short-maturity price of
both the call and the put is sqrt(t w^T sigma sigma^T w / (6 pi)), with
sigma = diag(s0) diag(Sigma(0, s0)) L and rho = L L^T.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import StructureError
from .limit_gaussian import build_limit_model
from .mc_engine import SimConfig, simulate_joint_N, simulate_paths
from .model_registry import ChainedSystem, CoefficientField

__all__ = [
    "BasketSpec",
    "complete_weights",
    "to_chained_system",
    "atm_asymptotic_price",
    "PriceResult",
    "mc_price",
    "LimitVariance",
    "limit_variance",
    "price_table",
    "beta_variance",
]


def _constant_vol(vol: np.ndarray) -> CoefficientField:
    d = len(vol)

    def f(t, s):
        return np.broadcast_to(vol, np.shape(s)[:-1] + (d,)).copy()

    def jac(t, s, l):
        return np.zeros(np.shape(s)[:-1] + (d, d))

    return CoefficientField(f, (d,), jac, "Sigma")


def _cev_vol(vol: np.ndarray, s0: np.ndarray, beta: float) -> CoefficientField:
    """Sigma_i(s) = vol_i (s_i / s0_i)^(beta - 1), a diagonal local volatility."""
    d = len(vol)

    def f(t, s):
        return vol * (np.abs(s[..., :d]) / s0) ** (beta - 1.0)

    def jac(t, s, l):
        out = np.zeros(np.shape(s)[:-1] + (d, d))
        if l == 1:
            si = np.abs(s[..., :d])
            g = vol * (beta - 1.0) * (si / s0) ** (beta - 2.0) / s0
            idx = np.arange(d)
            out[..., idx, idx] = g
        return out

    return CoefficientField(f, (d,), jac, "Sigma")


@dataclass(frozen=True, eq=False)
class BasketSpec:
    """Basket data. ``local_vol`` maps (t, s) with s of shape (..., d) to (..., d)."""

    s0: np.ndarray
    r: np.ndarray
    rho: np.ndarray
    w: np.ndarray
    local_vol: CoefficientField
    maturity: float = 1.0
    completion: Optional[np.ndarray] = None
    chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        d = len(s0)
        if np.any(s0 <= 0):
            raise StructureError("initial prices must be positive")
        r = np.broadcast_to(np.asarray(self.r, dtype=float), (d,)).copy()
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        w = np.broadcast_to(np.asarray(self.w, dtype=float), (d,)).copy()
        if rho.shape != (d, d) or not np.allclose(rho, rho.T, atol=1e-12) or not np.allclose(np.diag(rho), 1.0):
            raise StructureError("correlation must be a symmetric matrix with unit diagonal")
        try:
            L = np.linalg.cholesky(rho)
        except np.linalg.LinAlgError:
            raise StructureError("correlation matrix is not positive definite") from None
        if not np.any(w):
            raise StructureError("weights must not all vanish")
        sig0 = self.local_vol(0.0, s0)
        if np.any(sig0 <= 0):
            bad = [i + 1 for i in np.flatnonzero(sig0 <= 0)]
            raise StructureError(f"local volatility not positive at s0 for assets {bad}: system not hypoelliptic")
        for name, val in (("s0", s0), ("r", r), ("rho", rho), ("w", w), ("chol", L)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def d(self) -> int:
        return len(self.s0)

    @property
    def strike_atm(self) -> float:
        return float(self.w @ self.s0)

    def sigma0(self) -> np.ndarray:
        """sigma(0, s0) = diag(s0) diag(Sigma(0, s0)) L."""
        return (self.s0 * self.local_vol(0.0, self.s0))[:, None] * self.chol

    @classmethod
    def constant_vol(cls, s0, vol, r=0.0, rho=None, w=None, maturity: float = 1.0, completion=None) -> "BasketSpec":
        s0 = np.atleast_1d(np.asarray(s0, dtype=float))
        d = len(s0)
        vol = np.broadcast_to(np.asarray(vol, dtype=float), (d,)).copy()
        rho = np.eye(d) if rho is None else rho
        w = np.ones(d) if w is None else w
        return cls(s0, r, rho, w, _constant_vol(vol), maturity, completion)

    @classmethod
    def from_params(cls, s0, vol, r=0.0, rho=None, w=None, maturity: float = 1.0,
                    cev_beta: Optional[float] = None, completion=None) -> "BasketSpec":
        """Build from plain config values; ``cev_beta`` switches to a CEV local vol."""
        if cev_beta is None:
            return cls.constant_vol(s0, vol, r, rho, w, maturity, completion)
        s0 = np.atleast_1d(np.asarray(s0, dtype=float))
        d = len(s0)
        vol = np.broadcast_to(np.asarray(vol, dtype=float), (d,)).copy()
        rho = np.eye(d) if rho is None else rho
        w = np.ones(d) if w is None else w
        return cls(s0, r, rho, w, _cev_vol(vol, s0, float(cev_beta)), maturity, completion)


def complete_weights(w: Sequence[float], rows: Optional[np.ndarray] = None) -> np.ndarray:
    """Nonsingular d x d matrix with first row w.

    By default rows 2..d are the unit vectors of every column except the
    one holding the largest |w_k|, which makes the determinant +-max |w_k|.
    """
    w = np.asarray(w, dtype=float)
    d = len(w)
    if rows is not None:
        m = np.vstack([w, np.asarray(rows, dtype=float).reshape(d - 1, d)])
    else:
        piv = int(np.argmax(np.abs(w)))
        m = np.vstack([w] + [np.eye(d)[k] for k in range(d) if k != piv])
    if abs(np.linalg.det(m)) < 1e-12 * max(1.0, np.abs(m).max()) ** d:
        raise StructureError("weight completion is singular")
    return m


def to_chained_system(b: BasketSpec) -> ChainedSystem:
    """Map the basket to n = 2: block 1 the prices, block 2 = int wbar S ds."""
    d = b.d
    L = np.array(b.chol)
    r = np.array(b.r)
    wbar = complete_weights(b.w, b.completion)
    lv = b.local_vol

    def sig(t, x):
        y = x[..., :d]
        return (y * lv(t, x[..., :d]))[..., :, None] * L

    def sig_jac(t, x, l):
        # [..., a, i, c] = d sigma_{a i} / d x_{l, c}
        if l != 1:
            return np.zeros(np.shape(x)[:-1] + (d, d, d))
        y = x[..., :d]
        g = np.asarray(lv.jac(t, y, 1)) * y[..., :, None]  # y_a dSigma_a / dy_c
        idx = np.arange(d)
        g[..., idx, idx] += lv(t, y)
        return g[..., :, None, :] * L[:, :, None]

    sigma = CoefficientField(sig, (d, d), sig_jac, "sigma")

    def b1(t, x):
        s = sig(t, x)
        ds = sig_jac(t, x, 1)
        return x[..., :d] * r - 0.5 * np.einsum("...aic,...ci->...a", ds, s)

    def b2(t, x):
        return x[..., :d] @ wbar.T

    def b2_jac(t, x, l):
        m = wbar if l == 1 else np.zeros((d, d))
        return np.broadcast_to(m, np.shape(x)[:-1] + (d, d)).copy()

    drifts = (
        CoefficientField(b1, (d,), None, "B_1"),
        CoefficientField(b2, (d,), b2_jac, "B_2"),
    )
    xi = np.concatenate([b.s0, np.zeros(d)])
    box = np.concatenate([0.5 * b.s0, np.full(d, 0.5 * float(np.abs(wbar).sum(axis=1).max() * b.s0.max()))])
    return ChainedSystem(
        2, d, xi, drifts, sigma, horizon=b.maturity, name="local_vol_basket",
        params={"s0": b.s0.tolist(), "r": r.tolist(), "rho": b.rho.tolist(), "w": b.w.tolist()},
        box=box, hypotheses=("H2", "H2''"),
    )


def _radicand(b: BasketSpec) -> float:
    s = b.sigma0()
    return float(b.w @ s @ s.T @ b.w)


def atm_asymptotic_price(b: BasketSpec, t: float, kind: str = "call") -> float:
    """sqrt(t sum rho_im w_i w_m Sigma_i Sigma_m s0_i s0_m / (6 pi)); same for call and put."""
    if not t > 0:
        raise ValueError("maturity must be positive")
    if kind not in ("call", "put"):
        raise ValueError(f"unknown option kind {kind!r}")
    v = _radicand(b)
    if v <= 1e-14 * max(1.0, float(np.abs(b.w).max() * b.s0.max()) ** 2):
        warnings.warn("degenerate basket: limit variance is zero, price is 0", stacklevel=2)
        return 0.0
    return math.sqrt(t * v / (6.0 * math.pi))


@dataclass(frozen=True)
class PriceResult:
    price: float
    stderr: float
    strike: float
    kind: str
    t: float

    def to_dict(self) -> dict:
        return {"price": self.price, "stderr": self.stderr, "strike": self.strike, "kind": self.kind, "t": self.t}


def _averages(sys: ChainedSystem, cfg: SimConfig, t: float) -> np.ndarray:
    batch = simulate_paths(sys, cfg.with_(t=t))
    return batch.terminal()[:, sys.d] / t


def mc_price(b: BasketSpec, t: float, cfg: SimConfig, strike: Optional[float] = None, kind: str = "call",
             discount: bool = False, sys: Optional[ChainedSystem] = None,
             control_variate: bool = False) -> PriceResult:
    """E[(avg - K)^+] or E[(K - avg)^+] with avg = alpha_t / t; ATM when ``strike`` is None.

    Undiscounted unless ``discount`` is set, in which case the first asset's
    rate is used as the numeraire rate.

    ``control_variate`` (ATM only) subtracts the payoff of the Gaussian
    approximation avg ~ K + w^T sigma(0, s0) N^2_t / t driven by the same
    Brownian path, whose expectation is exactly the asymptotic price.
    """
    if kind not in ("call", "put"):
        raise ValueError(f"unknown option kind {kind!r}")
    K = b.strike_atm if strike is None else float(strike)
    sys = to_chained_system(b) if sys is None else sys
    if control_variate:
        if strike is not None and not math.isclose(K, b.strike_atm):
            raise ValueError("the control variate is only available at the money")
        batch = simulate_joint_N(sys, cfg.with_(t=t))
        ok = batch.valid
        avg = batch.X[ok, sys.d] / t
        lin = batch.N[ok, sys.d : 2 * sys.d] @ (b.w @ b.sigma0()) / t
        sgn = 1.0 if kind == "call" else -1.0
        pay = np.maximum(sgn * (avg - K), 0.0) - np.maximum(sgn * lin, 0.0) + atm_asymptotic_price(b, t)
    else:
        avg = _averages(sys, cfg, t)
        pay = np.maximum(avg - K, 0.0) if kind == "call" else np.maximum(K - avg, 0.0)
    if discount:
        pay = pay * math.exp(-float(b.r[0]) * t)
    return PriceResult(float(pay.mean()), float(pay.std(ddof=1) / math.sqrt(len(pay))), K, kind, t)


@dataclass(frozen=True)
class LimitVariance:
    variance: float
    by_components: float
    block_cov: np.ndarray
    generic_cov: np.ndarray

    @property
    def discrepancy(self) -> float:
        """Largest entrywise gap between the two covariance routes."""
        return float(np.max(np.abs(self.block_cov - self.generic_cov)))


def limit_variance(b: BasketSpec) -> LimitVariance:
    """w^T sigma sigma^T w / 3 and the full 2d x 2d limit covariance, each two ways."""
    s = b.sigma0()
    S = s @ s.T
    wbar = complete_weights(b.w, b.completion)
    block = np.block([[S, S @ wbar.T / 2.0], [wbar @ S / 2.0, wbar @ S @ wbar.T / 3.0]])
    generic = build_limit_model(to_chained_system(b)).cov
    sig0 = b.local_vol(0.0, b.s0)
    comp = sum(
        b.rho[i, m] * b.w[i] * b.w[m] * sig0[i] * sig0[m] * b.s0[i] * b.s0[m]
        for i in range(b.d)
        for m in range(b.d)
    ) / 3.0
    return LimitVariance(float(b.w @ S @ b.w) / 3.0, float(comp), block, generic)


def price_table(b: BasketSpec, t_grid, cfg: SimConfig, kind: str = "call", control_variate: bool = False) -> list:
    """Rows {t, mc, se, asymptotic, ratio}; every t reuses the same seed."""
    sys = to_chained_system(b)
    rows = []
    for t in t_grid:
        res = mc_price(b, float(t), cfg, kind=kind, sys=sys, control_variate=control_variate)
        asym = atm_asymptotic_price(b, float(t), kind)
        rows.append({"t": float(t), "mc": res.price, "se": res.stderr, "asymptotic": asym,
                     "ratio": res.price / asym if asym > 0 else math.nan})
    return rows


def beta_variance(b: BasketSpec, t: float, cfg: SimConfig) -> float:
    """Sample variance of t^{-1/2} (alpha_t / t - w^T s0)."""
    avg = _averages(to_chained_system(b), cfg, t)
    return float(np.var((avg - b.strike_atm) / math.sqrt(t), ddof=1))
