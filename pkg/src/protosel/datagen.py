"""Synthetic grouped designs and responses."""

from __future__ import annotations

import numpy as np

from .linear_core import FEASIBILITY_MARGIN, GroupedDesign, GTheta, InfeasibleThetaError


def group_partition(sizes) -> list[list[int]]:
    """Consecutive column blocks with the given sizes."""
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [list(range(int(a), int(b))) for a, b in zip(bounds[:-1], bounds[1:])]


def generate_design(n: int, p: int, groups, rho: float, seed=None) -> GroupedDesign:
    """Columns x_j = sqrt(rho) g_k + sqrt(1 - rho) e_j with one factor per group, standardized.

    ``groups`` is a list of index lists or a list of group sizes summing to p.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    groups = list(groups)
    if groups and np.isscalar(groups[0]):
        groups = group_partition(groups)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p)) * np.sqrt(1.0 - rho)
    if rho > 0:
        factors = rng.standard_normal((n, len(groups)))
        for k, idx in enumerate(groups):
            X[:, idx] += np.sqrt(rho) * factors[:, [k]]
    return GroupedDesign.from_raw(X, groups)


def linear_response(design: GroupedDesign, beta, sigma2: float = 1.0, rng=None) -> np.ndarray:
    """y = X beta + eps."""
    rng = np.random.default_rng(rng)
    return design.X @ np.asarray(beta, dtype=float) + np.sqrt(sigma2) * rng.standard_normal(design.n)


def prototype_response(hats, theta, mu: float = 0.0, sigma2: float = 1.0, rng=None,
                       size: int | None = None) -> np.ndarray:
    """y = G(theta)^-1 (mu 1 + eps), the solution of y = mu + sum theta_k H_k y + eps.

    With ``size`` returns that many independent draws as rows.
    """
    rng = np.random.default_rng(rng)
    g = GTheta(np.asarray(theta, dtype=float), list(hats))
    if g.min_eigenvalue() <= FEASIBILITY_MARGIN:
        raise InfeasibleThetaError("theta outside the feasible region")
    G = g.dense()
    m = 1 if size is None else size
    rhs = mu + np.sqrt(sigma2) * rng.standard_normal((g.n, m))
    Y = np.linalg.solve(G, rhs).T
    return Y[0] if size is None else Y


def generate_response(design: GroupedDesign, beta=None, *, theta=None, mu: float = 0.0,
                      hats=None, sigma2: float = 1.0, seed=None) -> np.ndarray:
    """Linear-model mode when ``beta`` is given, prototype-model mode otherwise."""
    if beta is not None:
        return linear_response(design, beta, sigma2, seed)
    if theta is None or hats is None:
        raise ValueError("prototype mode needs theta and hats")
    return prototype_response(hats, theta, mu, sigma2, seed)
