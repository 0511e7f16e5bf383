"""Deterministic skeleton, multi-scale dilation and the rescaled deviation chi_t."""

from __future__ import annotations

import csv
import math
import weakref
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalError

__all__ = [
    "DEFAULT_STEPS_PER_UNIT",
    "degree",
    "degree_multi",
    "degrees",
    "scaling_diagonal",
    "scaling_matrix",
    "scaling_logdet",
    "ThetaPath",
    "solve_theta",
    "rescale",
    "unrescale",
]

DEFAULT_STEPS_PER_UNIT = 1024


def degree(h: int, d: int, nd: Optional[int] = None) -> int:
    """g_h = 2 floor((h - 1) / d) + 1 for a 1-based coordinate index h."""
    if d < 1:
        raise ValueError("block dimension must be >= 1")
    if h < 1 or (nd is not None and h > nd):
        raise ValueError(f"coordinate index {h} out of range")
    return 2 * ((h - 1) // d) + 1


def degree_multi(alpha: Sequence[int], d: int, nd: Optional[int] = None) -> int:
    return sum(degree(h, d, nd) for h in alpha)


def degrees(n: int, d: int) -> np.ndarray:
    return np.array([degree(h, d) for h in range(1, n * d + 1)])


def scaling_diagonal(t: float, n: int, d: int) -> np.ndarray:
    """Diagonal of T_t: t^{g_h / 2}."""
    if not t > 0:
        raise ValueError(f"scaling requires t > 0, got {t}")
    return t ** (degrees(n, d) / 2.0)


def scaling_matrix(t: float, n: int, d: int) -> np.ndarray:
    return np.diag(scaling_diagonal(t, n, d))


def scaling_logdet(t: float, n: int, d: int) -> float:
    """log det T_t = (n^2 d / 2) log t."""
    return 0.5 * n * n * d * math.log(t)


@dataclass(frozen=True)
class ThetaPath:
    times: np.ndarray
    values: np.ndarray
    steps: int
    order: int = 4

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"theta_{h}" for h in range(1, self.values.shape[1] + 1)])
            for t, row in zip(self.times, self.values):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


_theta_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _rk4(sys, t: float, steps: int) -> ThetaPath:
    dt = t / steps
    times = np.linspace(0.0, t, steps + 1)
    vals = np.empty((steps + 1, sys.nd))
    y = np.array(sys.xi, dtype=float)
    vals[0] = y
    for k in range(steps):
        s = times[k]
        k1 = sys.drift(s, y)
        k2 = sys.drift(s + 0.5 * dt, y + 0.5 * dt * k1)
        k3 = sys.drift(s + 0.5 * dt, y + 0.5 * dt * k2)
        k4 = sys.drift(s + dt, y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"deterministic skeleton blew up at t = {times[k + 1]:.6g}")
        vals[k + 1] = y
    vals.setflags(write=False)
    times.setflags(write=False)
    return ThetaPath(times, vals, steps)


def solve_theta(sys, t: float, steps: Optional[int] = None) -> ThetaPath:
    """Classical RK4 for d theta = B(t, theta) dt, theta_0 = xi, on [0, t].

    Paths are cached per (model, t, steps).
    """
    if not 0 < t <= sys.horizon * (1 + 1e-12):
        raise ValueError(f"t = {t} outside (0, {sys.horizon}]")
    if steps is None:
        steps = max(8, math.ceil(DEFAULT_STEPS_PER_UNIT * t))
    if steps < 8:
        raise ValueError("solve_theta needs at least 8 steps")
    per_model = _theta_cache.setdefault(sys, {})
    key = (float(t), int(steps))
    if key not in per_model:
        per_model[key] = _rk4(sys, float(t), int(steps))
    return per_model[key]


def rescale(t: float, theta_t: np.ndarray, samples: np.ndarray, d: int) -> np.ndarray:
    """chi = T_t^{-1} (X - theta_t), row-wise."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[-1] // d
    return (samples - theta_t) / scaling_diagonal(t, n, d)


def unrescale(t: float, theta_t: np.ndarray, z: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`rescale`: T_t z + theta_t."""
    z = np.asarray(z, dtype=float)
    n = z.shape[-1] // d
    return z * scaling_diagonal(t, n, d) + theta_t
