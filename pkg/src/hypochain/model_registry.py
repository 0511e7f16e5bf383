"""Chained SDE systems: coefficient fields, structure checks and built-in models.

A chained system lives in R^{nd}, split into n blocks of size d. Only the
first block is driven by a d-dimensional Brownian motion (Stratonovich form);
block j > 1 evolves by a drift B_j that may only read blocks j-1, ..., n.

Coefficient fields are vectorized: they accept ``x`` with shape ``(..., nd)``
and return ``(..., d)`` (drifts) or ``(..., d, d)`` (the diffusion matrix).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalError, StructureError

__all__ = [
    "H1_THRESHOLD",
    "STRUCTURE_TOL",
    "CoefficientField",
    "LinearStructure",
    "ChainedSystem",
    "ValidationReport",
    "jacobian_block",
    "full_jacobian",
    "ito_correction",
    "ito_drift",
    "chain_products",
    "check_H1",
    "h1_holds",
    "sample_probes",
    "validate_structure",
    "kolmogorov_linear",
    "bs_asian",
    "quadratic_asian",
    "local_vol_basket",
    "REGISTRY",
    "build_model",
]

H1_THRESHOLD = 1e-12
STRUCTURE_TOL = 1e-10
FD_REL_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """A vectorized coefficient ``(t, x) -> value`` with an optional analytic Jacobian.

    ``jac(t, x, l)`` must return the derivative with respect to block ``l``
    (1-based), with the differentiated coordinate on the last axis, i.e. shape
    ``(..., *shape, d)``. Returning ``None`` falls back to finite differences.
    """

    func: Callable[[float, np.ndarray], np.ndarray]
    shape: tuple
    jac: Optional[Callable[[float, np.ndarray, int], Optional[np.ndarray]]] = None
    name: str = ""

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(t, np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True, eq=False)
class LinearStructure:
    """Exact affine form ``B(x) = M x + b`` with constant diffusion ``sigma0``."""

    drift_matrix: np.ndarray
    drift_offset: np.ndarray
    sigma0: np.ndarray


@dataclass(frozen=True, eq=False)
class ChainedSystem:
    n: int
    d: int
    xi: np.ndarray
    drifts: tuple
    sigma: CoefficientField
    horizon: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)
    box: object = 1.0
    hypotheses: tuple = ()
    linear: Optional[LinearStructure] = None

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise StructureError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        if len(self.drifts) != self.n:
            raise StructureError(f"expected {self.n} drift blocks, got {len(self.drifts)}")
        xi = np.array(self.xi, dtype=float).reshape(-1)
        if xi.shape != (self.n * self.d,):
            raise StructureError(f"initial point has {xi.size} entries, expected {self.n * self.d}")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "drifts", tuple(self.drifts))
        if not self.horizon > 0:
            raise ValueError("time horizon must be positive")

    @property
    def nd(self) -> int:
        return self.n * self.d

    def block_slice(self, j: int) -> slice:
        return slice((j - 1) * self.d, j * self.d)

    def block(self, x: np.ndarray, j: int) -> np.ndarray:
        return np.asarray(x)[..., self.block_slice(j)]

    def drift(self, t: float, x: np.ndarray) -> np.ndarray:
        """Stratonovich drift B(t, x), shape ``(..., nd)``."""
        return np.concatenate([b(t, x) for b in self.drifts], axis=-1)

    def diffusion(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.sigma(t, x)

    def box_halfwidths(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.box, dtype=float), (self.nd,)).copy()


@dataclass
class ValidationReport:
    structure_ok: bool
    h1_lambda: float
    h2_box_bound: float
    warnings: list = field(default_factory=list)
    hypotheses: tuple = ()

    @property
    def h1_ok(self) -> bool:
        return h1_holds(self.h1_lambda)

    def to_dict(self) -> dict:
        return {
            "structure_ok": bool(self.structure_ok),
            "h1_lambda": float(self.h1_lambda),
            "h1_ok": bool(self.h1_ok),
            "h2_box_bound": float(self.h2_box_bound),
            "warnings": list(self.warnings),
            "hypotheses": list(self.hypotheses),
        }


# ---------------------------------------------------------------------------
# Differentiation


def _fd_step(xc: np.ndarray) -> np.ndarray:
    return np.maximum(FD_REL_STEP, FD_REL_STEP * np.abs(xc))


def jacobian_block(
    fld: CoefficientField,
    l: int,
    t: float,
    x: np.ndarray,
    column: Optional[int] = None,
    analytic: bool = True,
) -> np.ndarray:
    """Jacobian of ``fld`` with respect to block ``l`` (1-based) at ``(t, x)``.

    Returns shape ``(..., *fld.shape, d)``; for a matrix field, ``column=i``
    selects the Jacobian of the i-th column (0-based), shape ``(..., d, d)``.
    Central differences use h = max(1e-6, 1e-6 |x_h|) per coordinate.
    """
    x = np.asarray(x, dtype=float)
    d = fld.shape[0]
    nd = x.shape[-1]
    if not 1 <= l <= nd // d:
        raise ValueError(f"block index {l} outside 1..{nd // d}")
    out = None
    if analytic and fld.jac is not None:
        out = fld.jac(t, x, l)
    if out is None:
        cols = []
        for k in range((l - 1) * d, l * d):
            h = _fd_step(x[..., k])
            xp = x.copy()
            xm = x.copy()
            xp[..., k] += h
            xm[..., k] -= h
            fp = fld(t, xp)
            fm = fld(t, xm)
            if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
                raise NumericalError(f"non-finite evaluation of {fld.name or 'field'} at coordinate {k + 1}")
            step = (xp[..., k] - xm[..., k]).reshape(x.shape[:-1] + (1,) * len(fld.shape))
            cols.append((fp - fm) / step)
        out = np.stack(cols, axis=-1)
    out = np.asarray(out, dtype=float)
    if column is not None:
        out = out[..., column, :]
    return out


def full_jacobian(fld: CoefficientField, t: float, x: np.ndarray, analytic: bool = True) -> np.ndarray:
    """Jacobian with respect to the whole state, last axis of length nd."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1] // fld.shape[0]
    return np.concatenate([jacobian_block(fld, l, t, x, analytic=analytic) for l in range(1, n + 1)], axis=-1)


def ito_correction(sys: ChainedSystem, t: float, x: np.ndarray) -> np.ndarray:
    """0.5 * sum_i (J_{x_1} sigma^i) sigma^i, shape ``(..., d)``."""
    s = sys.sigma(t, x)
    ds = jacobian_block(sys.sigma, 1, t, x)  # [..., a, i, c] = d sigma_{ai} / d x_{1c}
    return 0.5 * np.einsum("...aic,...ci->...a", ds, s)


def ito_drift(sys: ChainedSystem, t: float, x: np.ndarray) -> np.ndarray:
    """Ito drift: B plus the Stratonovich correction on block 1 only."""
    b = sys.drift(t, x)
    b[..., : sys.d] += ito_correction(sys, t, x)
    return b


# ---------------------------------------------------------------------------
# Hormander structure


def chain_products(sys: ChainedSystem, t: float = 0.0, x: Optional[np.ndarray] = None) -> list:
    """Blocks sigma, J_{x_1}B_2 sigma, ..., J_{x_{n-1}}B_n ... J_{x_1}B_2 sigma."""
    x = sys.xi if x is None else np.asarray(x, dtype=float)
    prod = sys.sigma(t, x)
    blocks = [prod]
    for j in range(2, sys.n + 1):
        prod = jacobian_block(sys.drifts[j - 1], j - 1, t, x) @ prod
        blocks.append(prod)
    return blocks


def check_H1(sys: ChainedSystem) -> float:
    """Smallest singular value of the iterated Jacobian product at (0, xi)."""
    top = chain_products(sys)[-1]
    if not np.all(np.isfinite(top)):
        raise NumericalError("non-finite Hormander product at the initial point")
    return float(np.linalg.svd(top, compute_uv=False).min())


def h1_holds(lam: float) -> bool:
    return lam > H1_THRESHOLD


def sample_probes(sys: ChainedSystem, count: int = 64, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    """Uniform probe points in the model's box around xi."""
    rng = np.random.default_rng(seed)
    hw = scale * sys.box_halfwidths()
    return sys.xi + rng.uniform(-1.0, 1.0, size=(count, sys.nd)) * hw


def _check_shapes(sys: ChainedSystem, t: float) -> None:
    x = sys.xi
    for j, b in enumerate(sys.drifts, start=1):
        out = b(t, x)
        if out.shape != (sys.d,):
            raise StructureError(f"B_{j} returns shape {out.shape}, expected ({sys.d},)")
    s = sys.sigma(t, x)
    if s.shape != (sys.d, sys.d):
        raise StructureError(f"sigma returns shape {s.shape}, expected ({sys.d}, {sys.d})")


def _sup_abs(fld: CoefficientField, t: float, pts: np.ndarray) -> float:
    return float(np.max(np.abs(fld(t, pts))))


def validate_structure(
    sys: ChainedSystem,
    probes: Optional[np.ndarray] = None,
    t: float = 0.0,
) -> ValidationReport:
    """Check the dependence structure, (H1) at xi, and sampled (H2)-type bounds.

    Global (H2) bounds cannot be certified numerically: the sup of first
    derivatives over the probe box is reported, and unbounded-looking
    diffusion growth produces a warning, never a failure.
    """
    _check_shapes(sys, t)
    if probes is None:
        probes = sample_probes(sys)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[0] == 0:
        raise ValueError("probe set is empty")
    if probes.shape[1] != sys.nd:
        raise StructureError(f"probes have {probes.shape[1]} coordinates, expected {sys.nd}")

    warnings = []
    structure_ok = True
    for j in range(3, sys.n + 1):
        for l in range(1, j - 1):
            jac = jacobian_block(sys.drifts[j - 1], l, t, probes, analytic=False)
            worst = float(np.max(np.abs(jac)))
            if worst > STRUCTURE_TOL:
                structure_ok = False
                warnings.append(f"B_{j} depends on x_{l} (j={j}, l={l}): max |J| = {worst:.3e}")

    bound = 0.0
    for b in sys.drifts:
        bound = max(bound, float(np.max(np.abs(full_jacobian(b, t, probes)))))
    bound = max(bound, float(np.max(np.abs(full_jacobian(sys.sigma, t, probes)))))
    warnings.append(f"(H2) bounds sampled on a local box only: sup |dB|, |dsigma| = {bound:.6g}")

    # linear growth of sigma shows up as proportional growth of the sup over nested boxes
    far = sys.xi + 2.0 * (probes - sys.xi)
    s0 = float(np.max(np.abs(sys.sigma(t, sys.xi))))
    s1 = _sup_abs(sys.sigma, t, probes)
    s2 = _sup_abs(sys.sigma, t, far)
    if s1 - s0 > 1e-12 * max(1.0, s0) and s2 - s1 >= 0.5 * (s1 - s0):
        warnings.append(
            "sigma appears unbounded on the sampled boxes (linear growth); "
            "bounded-sigma hypothesis (H2') not supported, see (H2'')"
        )

    lam = check_H1(sys)
    if not h1_holds(lam):
        warnings.append(f"(H1) fails at (0, xi): smallest singular value {lam:.3e}")
    return ValidationReport(structure_ok, lam, bound, warnings, tuple(sys.hypotheses))


# ---------------------------------------------------------------------------
# Built-in models


def _const_jac(mat_by_block: dict, d: int):
    def jac(t, x, l):
        m = mat_by_block.get(l)
        if m is None:
            m = np.zeros((d, d))
        return np.broadcast_to(m, np.shape(x)[:-1] + m.shape).copy()

    return jac


def _as_matrix(v, d: int) -> np.ndarray:
    m = np.asarray(v, dtype=float)
    if m.ndim == 0:
        return float(m) * np.eye(d)
    if m.shape != (d, d):
        raise StructureError(f"expected a {d}x{d} matrix, got shape {m.shape}")
    return m


def kolmogorov_linear(
    n: int = 2,
    d: int = 1,
    sigma0=1.0,
    couplings: Optional[Sequence] = None,
    xi: Optional[Sequence[float]] = None,
    offsets: Optional[Sequence] = None,
    horizon: float = 1.0,
) -> ChainedSystem:
    """Linear chain: B_1 = b_1, B_j = C_j x_{j-1} + b_j, constant sigma."""
    s0 = _as_matrix(sigma0, d)
    if couplings is None:
        couplings = [1.0] * (n - 1)
    if len(couplings) != n - 1:
        raise StructureError(f"need {n - 1} coupling matrices, got {len(couplings)}")
    cs = [_as_matrix(c, d) for c in couplings]
    offs = [np.zeros(d)] * n if offsets is None else [np.broadcast_to(np.asarray(o, float), (d,)).copy() for o in offsets]
    if len(offs) != n:
        raise StructureError(f"need {n} offsets, got {len(offs)}")
    xi_arr = np.zeros(n * d) if xi is None else np.asarray(xi, dtype=float)

    def first(t, x, b=offs[0]):
        return np.broadcast_to(b, np.shape(x)[:-1] + (d,)).copy()

    drifts = [CoefficientField(first, (d,), _const_jac({}, d), "B_1")]
    for j in range(2, n + 1):
        c, b = cs[j - 2], offs[j - 1]
        sl = slice((j - 2) * d, (j - 1) * d)

        def bj(t, x, c=c, b=b, sl=sl):
            return x[..., sl] @ c.T + b

        drifts.append(CoefficientField(bj, (d,), _const_jac({j - 1: c}, d), f"B_{j}"))

    def sig(t, x):
        return np.broadcast_to(s0, np.shape(x)[:-1] + (d, d)).copy()

    def sig_jac(t, x, l):
        return np.zeros(np.shape(x)[:-1] + (d, d, d))

    m = np.zeros((n * d, n * d))
    for j in range(2, n + 1):
        m[(j - 1) * d : j * d, (j - 2) * d : (j - 1) * d] = cs[j - 2]
    lin = LinearStructure(m, np.concatenate(offs), s0)
    params = {"n": n, "d": d, "sigma0": s0.tolist(), "couplings": [c.tolist() for c in cs],
              "xi": xi_arr.tolist(), "offsets": [o.tolist() for o in offs]}
    return ChainedSystem(
        n, d, xi_arr, tuple(drifts), CoefficientField(sig, (d, d), sig_jac, "sigma"),
        horizon=horizon, name="kolmogorov", params=params, box=1.0,
        hypotheses=("H2", "H2'"), linear=lin,
    )


def bs_asian(s0: float = 100.0, r: float = 0.05, vol: float = 0.2, convention: str = "ito",
             horizon: float = 1.0) -> ChainedSystem:
    """Arithmetic Asian option under Black-Scholes: dS = rS dt + vol S dW, dA = S dt.

    With ``convention="ito"`` (default) the displayed drift is the Ito drift,
    so the stored Stratonovich drift is (r - vol^2/2) S and E[S_t] = s0 e^{rt}.
    With ``"stratonovich"`` the displayed drift is taken as B itself, which
    gives the deterministic skeleton (s0 e^{rt}, s0 (e^{rt} - 1) / r).
    """
    if convention not in ("ito", "stratonovich"):
        raise ValueError("convention must be 'ito' or 'stratonovich'")
    mu = r - 0.5 * vol**2 if convention == "ito" else r

    def b1(t, x):
        return mu * x[..., 0:1]

    def b2(t, x):
        return x[..., 0:1].copy()

    def sig(t, x):
        return vol * x[..., 0:1, None]

    def sig_jac(t, x, l):
        val = vol if l == 1 else 0.0
        return np.full(np.shape(x)[:-1] + (1, 1, 1), val)

    drifts = (
        CoefficientField(b1, (1,), _const_jac({1: np.array([[mu]])}, 1), "B_1"),
        CoefficientField(b2, (1,), _const_jac({1: np.array([[1.0]])}, 1), "B_2"),
    )
    return ChainedSystem(
        2, 1, np.array([s0, 0.0]), drifts, CoefficientField(sig, (1, 1), sig_jac, "sigma"),
        horizon=horizon, name="bs_asian",
        params={"s0": s0, "r": r, "vol": vol, "convention": convention},
        box=np.array([0.5 * s0, 0.5 * s0]), hypotheses=("H2", "H2''"),
    )


def quadratic_asian(xi1: float = 1.0, horizon: float = 1.0) -> ChainedSystem:
    """X^1 = xi1 + W, X^2 = int (X^1)^2 ds."""

    def b1(t, x):
        return np.zeros(np.shape(x)[:-1] + (1,))

    def b2(t, x):
        return x[..., 0:1] ** 2

    def b2_jac(t, x, l):
        if l == 1:
            return 2.0 * x[..., 0:1, None]
        return np.zeros(np.shape(x)[:-1] + (1, 1))

    def sig(t, x):
        return np.ones(np.shape(x)[:-1] + (1, 1))

    def sig_jac(t, x, l):
        return np.zeros(np.shape(x)[:-1] + (1, 1, 1))

    drifts = (
        CoefficientField(b1, (1,), _const_jac({}, 1), "B_1"),
        CoefficientField(b2, (1,), b2_jac, "B_2"),
    )
    return ChainedSystem(
        2, 1, np.array([xi1, 0.0]), drifts, CoefficientField(sig, (1, 1), sig_jac, "sigma"),
        horizon=horizon, name="quadratic_asian", params={"xi1": xi1}, box=1.0,
        hypotheses=("H2 after localization",),
    )


def local_vol_basket(spec) -> ChainedSystem:
    from .asian_pricing import to_chained_system

    return to_chained_system(spec)


def _basket_from_params(**params) -> ChainedSystem:
    from .asian_pricing import BasketSpec

    return local_vol_basket(BasketSpec.from_params(**params))


REGISTRY = {
    "kolmogorov": kolmogorov_linear,
    "kolmogorov_linear": kolmogorov_linear,
    "bs_asian": bs_asian,
    "quadratic_asian": quadratic_asian,
    "local_vol_basket": _basket_from_params,
}


def build_model(key: str, params: Optional[dict] = None) -> ChainedSystem:
    try:
        ctor = REGISTRY[key]
    except KeyError:
        raise KeyError(f"unknown model key {key!r}; known: {sorted(REGISTRY)}") from None
    return ctor(**(params or {}))
