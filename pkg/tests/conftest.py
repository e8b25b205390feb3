"""Shared oracles and generators for the test suite.

The closed-form scalar solutions and scipy's Riccati solver serve as
independent oracles for the package's own fixed-point iteration.
"""

import numpy as np
import scipy.linalg

from adaptive_lqr import PlantModel


def scalar_p(a: float, b: float) -> float:
    """Closed-form scalar fixed point of p = 1 + min_k [k^2 + (a+bk)^2 p].

    b = 0 requires |a| < 1 and gives p = 1 / (1 - a^2); otherwise p is the
    positive root of b^2 p^2 - (a^2 + b^2 - 1) p - 1 = 0.
    """
    if b == 0.0:
        assert abs(a) < 1.0
        return 1.0 / (1.0 - a**2)
    coeffs = [b**2, -(a**2 + b**2 - 1.0), -1.0]
    roots = np.roots(coeffs)
    return float(max(roots.real))


def scalar_k(a: float, b: float, p: float) -> float:
    """Minimizing scalar gain k = -abp / (1 + b^2 p)."""
    return -a * b * p / (1.0 + b**2 * p)


def scipy_dare(plant: PlantModel):
    """Independent oracle: scipy's solver for the unit-cost problem."""
    P = scipy.linalg.solve_discrete_are(plant.A, plant.B, np.eye(plant.n), np.eye(plant.m))
    K = -np.linalg.solve(np.eye(plant.m) + plant.B.T @ P @ plant.B, plant.B.T @ P @ plant.A)
    return P, K


def random_stabilizable_plant(rng: np.random.Generator, n: int, m: int,
                              max_radius: float = 1.5) -> PlantModel:
    """Random plant accepted when the scipy oracle can solve it."""
    while True:
        A = rng.uniform(-1.0, 1.0, (n, n))
        r = np.max(np.abs(np.linalg.eigvals(A)))
        if r < 1e-9:
            continue
        A = A * (rng.uniform(0.05, max_radius) / r)
        B = rng.uniform(-1.0, 1.0, (n, m))
        plant = PlantModel(A, B)
        try:
            scipy.linalg.solve_discrete_are(A, B, np.eye(n), np.eye(m))
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            continue
        return plant


def random_history(rng: np.random.Generator, n: int, m: int, length: int):
    """Random (x, u, x_next) triples with O(1) entries."""
    return [
        (rng.standard_normal(n), rng.standard_normal(m), rng.standard_normal(n))
        for _ in range(length)
    ]
