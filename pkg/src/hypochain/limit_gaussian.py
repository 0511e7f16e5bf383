"""Short-time Gaussian limit of the rescaled heat kernel.

The limit law of chi_t is N(0, A Q A^T): A collects the iterated drift-Jacobian
products at the initial point, Q is the covariance of the rescaled iterated
Wiener integrals. Quadratic forms always go through a Cholesky factor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DegenerateModelError
from .model_registry import ChainedSystem, chain_products, check_H1, h1_holds

__all__ = [
    "LimitModel",
    "build_A",
    "build_Q",
    "q_n",
    "build_limit_model",
    "limit_density",
    "limit_gradient",
    "limit_hessian",
    "gradient_sign_check",
    "lie_bracket",
    "HormanderReport",
    "build_hormander_matrix",
]

BRACKET_STEP = 1e-4
ZERO_BLOCK_TOL = 1e-6


def build_A(sys: ChainedSystem) -> np.ndarray:
    lam = check_H1(sys)
    if not h1_holds(lam):
        raise DegenerateModelError(f"(H1) fails at the initial point: lambda = {lam:.3e}")
    blocks = chain_products(sys)
    d = sys.d
    A = np.zeros((sys.nd, sys.nd))
    for j, blk in enumerate(blocks):
        A[j * d : (j + 1) * d, j * d : (j + 1) * d] = blk
    return A


def build_Q(n: int, d: int) -> np.ndarray:
    """Block (l, j) = Id_d / ((l + j - 1) (l - 1)! (j - 1)!)."""
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    idx = np.arange(1, n + 1)
    fact = np.array([math.factorial(k - 1) for k in idx], dtype=float)
    q1 = 1.0 / ((idx[:, None] + idx[None, :] - 1) * fact[:, None] * fact[None, :])
    Q = np.kron(q1, np.eye(d))
    np.linalg.cholesky(Q)  # raises LinAlgError unless positive definite
    return Q


def q_n(n: int, d: int = 1, route: str = "determinant") -> float:
    """Normalising constant (2 pi)^{n/2} (det Q)^{1/(2d)}.

    ``route="factorial"`` evaluates the closed form
    (2 pi)^{n/2} prod_{j<n} j! / sqrt(prod_{j<2n} j!) instead.
    """
    if route == "determinant":
        L = np.linalg.cholesky(build_Q(n, d))
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return math.exp(0.5 * n * math.log(2 * math.pi) + logdet / (2 * d))
    if route == "factorial":
        num = sum(math.lgamma(j + 1) for j in range(1, n))
        den = sum(math.lgamma(j + 1) for j in range(1, 2 * n))
        return math.exp(0.5 * n * math.log(2 * math.pi) + num - 0.5 * den)
    raise ValueError(f"unknown route {route!r}")


@dataclass(frozen=True, eq=False)
class LimitModel:
    n: int
    d: int
    A: np.ndarray
    Q: np.ndarray
    cov: np.ndarray
    qn: float
    detA_abs: float
    chol: np.ndarray = field(repr=False)

    @property
    def peak(self) -> float:
        """Limit density at the origin, 1 / (q_n^d |det A|)."""
        return 1.0 / (self.qn**self.d * self.detA_abs)

    def solve(self, y: np.ndarray) -> np.ndarray:
        """(A Q A^T)^{-1} y for y of shape (..., nd)."""
        y = np.asarray(y, dtype=float)
        flat = y.reshape(-1, y.shape[-1]).T
        return cho_solve((self.chol, True), flat).T.reshape(y.shape)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "q_n": self.qn,
            "detA_abs": self.detA_abs,
            "A": self.A.tolist(),
            "Q": self.Q.tolist(),
            "AQAT": self.cov.tolist(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def build_limit_model(sys: ChainedSystem) -> LimitModel:
    A = build_A(sys)
    Q = build_Q(sys.n, sys.d)
    cov = A @ Q @ A.T
    cov = 0.5 * (cov + cov.T)
    chol = np.linalg.cholesky(cov)
    detA = float(abs(np.prod(np.diag(np.linalg.qr(A, mode="r")))))
    return LimitModel(sys.n, sys.d, A, Q, cov, q_n(sys.n, sys.d), detA, chol)


def _quad(L: LimitModel, ybar: np.ndarray) -> np.ndarray:
    y = np.asarray(ybar, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite evaluation point")
    flat = y.reshape(-1, y.shape[-1]).T
    z = solve_triangular(L.chol, flat, lower=True)
    return np.sum(z * z, axis=0).reshape(y.shape[:-1])


def limit_density(L: LimitModel, ybar: np.ndarray) -> np.ndarray:
    """exp(-<(AQA^T)^{-1} y, y> / 2) / (q_n^d |det A|)."""
    return L.peak * np.exp(-0.5 * _quad(L, ybar))


def limit_gradient(L: LimitModel, ybar: np.ndarray, convention: str = "gaussian") -> np.ndarray:
    """Gradient of the limit density.

    ``"gaussian"`` is the true gradient -p (AQA^T)^{-1} y. ``"positive"``
    returns the positive-sign variant +p (AQA^T)^{-1} y; use
    :func:`gradient_sign_check` to see which one finite differences support.
    """
    y = np.asarray(ybar, dtype=float)
    p = limit_density(L, y)[..., None]
    g = p * L.solve(y)
    if convention == "gaussian":
        return -g
    if convention == "positive":
        return g
    raise ValueError(f"unknown convention {convention!r}")


def limit_hessian(L: LimitModel, ybar: np.ndarray) -> np.ndarray:
    """p ((AQA^T)^{-1} y y^T (AQA^T)^{-1} - (AQA^T)^{-1})."""
    y = np.asarray(ybar, dtype=float)
    p = limit_density(L, y)[..., None, None]
    s = L.solve(y)
    inv = cho_solve((L.chol, True), np.eye(y.shape[-1]))
    return p * (s[..., :, None] * s[..., None, :] - inv)


def gradient_sign_check(L: LimitModel, points: np.ndarray, h: float = 1e-5) -> dict:
    """Compare both gradient conventions with central differences of the density."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nd = pts.shape[1]
    fd = np.empty_like(pts)
    for k in range(nd):
        e = np.zeros(nd)
        e[k] = h
        fd[:, k] = (limit_density(L, pts + e) - limit_density(L, pts - e)) / (2 * h)
    scale = max(float(np.max(np.abs(fd))), 1e-300)
    errs = {c: float(np.max(np.abs(limit_gradient(L, pts, c) - fd))) / scale for c in ("gaussian", "positive")}
    return {"relative_error": errs, "matches": min(errs, key=errs.get)}


# ---------------------------------------------------------------------------
# Hormander matrix by nested finite differences


def _rich_jacobian(f: Callable, x: np.ndarray, step: float) -> np.ndarray:
    fx = f(x)
    J = np.empty((fx.size, x.size))
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))

        def cd(hh):
            xp = x.copy()
            xm = x.copy()
            xp[k] += hh
            xm[k] -= hh
            return (f(xp) - f(xm)) / (xp[k] - xm[k])

        J[:, k] = (4.0 * cd(0.5 * h) - cd(h)) / 3.0
    return J


def lie_bracket(f: Callable, g: Callable, step: float = BRACKET_STEP) -> Callable:
    """[f, g] = (Jg) f - (Jf) g, Jacobians by Richardson-extrapolated differences."""

    def br(x):
        x = np.asarray(x, dtype=float)
        return _rich_jacobian(g, x, step) @ f(x) - _rich_jacobian(f, x, step) @ g(x)

    return br


@dataclass
class HormanderReport:
    matrix: np.ndarray
    below_mass: float
    total_norm: float
    diag_errors: list
    signs: list

    @property
    def triangular_ok(self) -> bool:
        return self.below_mass <= ZERO_BLOCK_TOL * self.total_norm

    @property
    def diagonal_ok(self) -> bool:
        return all(e <= ZERO_BLOCK_TOL * self.total_norm for e in self.diag_errors)

    @property
    def ok(self) -> bool:
        return self.triangular_ok and self.diagonal_ok

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "below_mass": self.below_mass,
            "total_norm": self.total_norm,
            "diag_errors": list(self.diag_errors),
            "signs": list(self.signs),
            "triangular_ok": self.triangular_ok,
            "diagonal_ok": self.diagonal_ok,
        }


def build_hormander_matrix(sys: ChainedSystem, t: float = 0.0) -> HormanderReport:
    """Columns [B, sbar^i]^{(l)} at (t, xi) for l = 0..n-1, i = 1..d.

    [B, phi]^{(l)} is the l-fold bracket with the drift on the left, so the
    l-th diagonal block equals (-1)^l times the l-th block of A; the nested
    form [...[sbar^i, B], ..., B] differs from it exactly by that sign.
    """
    n, d, nd = sys.n, sys.d, sys.nd
    xi = np.array(sys.xi, dtype=float)

    def drift(x):
        return sys.drift(t, x)

    cols = []
    for i in range(d):

        def phi(x, i=i):
            out = np.zeros(nd)
            out[:d] = sys.sigma(t, x)[:, i]
            return out

        field_l = phi
        for l in range(n):
            if l > 0:
                field_l = lie_bracket(drift, field_l, step=BRACKET_STEP * 4 ** (l - 1))
            cols.append((l, i, field_l(xi)))
    M = np.zeros((nd, nd))
    for l, i, v in cols:
        M[:, l * d + i] = v

    below = 0.0
    for l in range(n):
        below += float(np.sum(M[(l + 1) * d :, l * d : (l + 1) * d] ** 2))
    prods = chain_products(sys, t)
    errs, signs = [], []
    for l in range(n):
        blk = M[l * d : (l + 1) * d, l * d : (l + 1) * d]
        sign = (-1) ** l
        errs.append(float(np.linalg.norm(blk - sign * prods[l])))
        signs.append(sign)
    return HormanderReport(M, math.sqrt(below), float(np.linalg.norm(M)), errs, signs)
