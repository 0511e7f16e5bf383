"""Kolmogorov chain dX1 = dW, dX2 = X1 dt, start to finish.

Builds the model, checks the structure, simulates, rescales and compares
the kernel density estimate with the Gaussian limit at a few times.
Run: python3 demos/kolmogorov_walkthrough.py [n_paths]
"""

import sys

import numpy as np

from hypochain import (
    SimConfig,
    build_limit_model,
    estimate_density,
    kolmogorov_linear,
    limit_density,
    simulate_paths,
    solve_theta,
    validate_structure,
)

n_paths = int(sys.argv[1]) if len(sys.argv) > 1 else 200_000
model = kolmogorov_linear()

rep = validate_structure(model)
print("structure ok:", rep.structure_ok, " lambda =", rep.h1_lambda)

L = build_limit_model(model)
print("limit covariance A Q A^T:\n", L.cov)
print("limit density at the origin:", L.peak)

for t in (1.0, 0.1, 0.01):
    batch = simulate_paths(model, SimConfig(t=t, n_paths=n_paths, steps=64, seed=1))
    theta = solve_theta(model, t).terminal
    est = estimate_density(batch, theta, t, model.n, model.d)
    for z in ([0.0, 0.0], [0.5, 0.2]):
        got = est.pdf_chi(np.array([z]))[0]
        want = limit_density(L, np.array(z))
        print(f"t={t:<5} z={z}  kde={got:.4f}  limit={want:.4f}  rel.err={abs(got - want) / want:.3f}")

# the law of the rescaled variable does not depend on t for this model,
# so the error above is pure kernel smoothing bias plus MC noise
