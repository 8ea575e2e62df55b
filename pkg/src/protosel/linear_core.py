"""Hat matrices, the prototype operator G(theta) and its inverse / log-determinant.

Hat operators are stored through an orthonormal basis ``U`` and weights ``w`` so
that ``H = U diag(w) U^T``.  Least squares and lasso-refit prototypes have unit
weights (projections); ridge prototypes have ``w_i = d_i^2 / (d_i^2 + lam)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.linalg.blas import dger

RANK_TOL = 1e-10
FEASIBILITY_MARGIN = 1e-10

HAT_KINDS = ("least_squares", "ridge", "lasso_refit")


class InfeasibleThetaError(ValueError):
    """Raised when G(theta) is not positive definite."""


@dataclass(frozen=True, eq=False)
class GroupedDesign:
    """Standardized design matrix with a disjoint column partition.

    Columns of ``X`` have zero mean and unit Euclidean norm.  ``column_means``
    and ``column_scales`` record the transformation applied to the raw matrix.
    """

    X: np.ndarray
    groups: tuple[np.ndarray, ...]
    column_means: np.ndarray
    column_scales: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        p = X.shape[1]
        seen = np.zeros(p, dtype=bool)
        groups = []
        for k, g in enumerate(self.groups):
            g = np.asarray(g, dtype=int).ravel()
            if g.size == 0:
                raise ValueError(f"group {k} is empty")
            if g.min() < 0 or g.max() >= p:
                raise ValueError(f"group {k} has column indices outside [0, {p})")
            if np.any(seen[g]) or np.unique(g).size != g.size:
                raise ValueError(f"group {k} overlaps another group")
            seen[g] = True
            groups.append(g)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "groups", tuple(groups))

    @classmethod
    def from_raw(cls, X_raw, groups: Sequence[Sequence[int]]) -> "GroupedDesign":
        X_raw = np.asarray(X_raw, dtype=float)
        means = X_raw.mean(axis=0)
        Xc = X_raw - means
        scales = np.linalg.norm(Xc, axis=0)
        if np.any(scales == 0):
            bad = int(np.flatnonzero(scales == 0)[0])
            raise ValueError(f"column {bad} is constant and cannot be standardized")
        return cls(Xc / scales, tuple(np.asarray(g) for g in groups), means, scales)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> list[int]:
        return [len(g) for g in self.groups]

    def group_matrix(self, k: int) -> np.ndarray:
        return self.X[:, self.groups[k]]


@dataclass(frozen=True, eq=False)
class HatOperator:
    """``H = U diag(weights) U^T`` with orthonormal ``basis`` columns."""

    basis: np.ndarray
    weights: np.ndarray
    kind: str = "least_squares"
    lam: float = 0.0
    singular_values: np.ndarray | None = None
    columns: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def is_projection(self) -> bool:
        return self.kind != "ridge" or self.lam == 0.0

    @property
    def trace(self) -> float:
        return float(self.weights.sum())

    def apply(self, y: np.ndarray) -> np.ndarray:
        """H y (works column-wise on a matrix)."""
        coef = self.basis.T @ y
        if y.ndim == 1:
            return self.basis @ (self.weights * coef)
        return self.basis @ (self.weights[:, None] * coef)

    def quadratic(self, y: np.ndarray) -> float:
        """y^T H y."""
        coef = self.basis.T @ y
        return float(np.dot(self.weights, coef * coef))

    def dense(self) -> np.ndarray:
        return (self.basis * self.weights) @ self.basis.T


def orthonormal_basis(X_sub: np.ndarray, tol: float = RANK_TOL):
    """Thin SVD basis of ``X_sub`` dropping singular values below ``tol * s_max``."""
    U, d, _ = np.linalg.svd(X_sub, full_matrices=False)
    if d.size == 0 or d[0] == 0:
        return U[:, :0], d[:0]
    keep = d > tol * d[0]
    return U[:, keep], d[keep]


def make_hat(X_sub, kind: str = "least_squares", lam: float = 0.0, columns=None) -> HatOperator:
    """Build the hat operator of least squares, ridge or lasso-refit prototypes."""
    if kind not in HAT_KINDS:
        raise ValueError(f"unknown hat kind {kind!r}")
    X_sub = np.asarray(X_sub, dtype=float)
    if X_sub.ndim == 1:
        X_sub = X_sub[:, None]
    if X_sub.shape[1] == 0:
        raise ValueError("empty group")
    if lam < 0:
        raise ValueError("ridge penalty must be non-negative")
    U, d = orthonormal_basis(X_sub)
    if kind == "ridge" and lam > 0:
        w = d**2 / (d**2 + lam)
    else:
        w = np.ones_like(d)
        lam = 0.0 if kind != "ridge" else lam
    cols = None if columns is None else np.asarray(columns, dtype=int)
    return HatOperator(U, w, kind, float(lam), d, cols)


@dataclass(frozen=True, eq=False)
class GTheta:
    """G(theta) = I - sum_k theta_k H_k."""

    theta: np.ndarray
    hats: tuple[HatOperator, ...]

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if theta.shape != (len(self.hats),):
            raise ValueError("theta must have one entry per hat")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "hats", tuple(self.hats))

    @property
    def n(self) -> int:
        return self.hats[0].n

    def dense(self) -> np.ndarray:
        G = np.eye(self.n)
        for t, h in zip(self.theta, self.hats):
            if t != 0.0:
                G -= t * h.dense()
        return G

    def min_eigenvalue(self) -> float:
        return HatStack(self.hats).min_eig(self.theta)

    def is_feasible(self) -> bool:
        return self.min_eigenvalue() >= -FEASIBILITY_MARGIN


def sherman_morrison_inverse(g: GTheta, with_logdet: bool = False):
    """G(theta)^{-1} by one rank-one Sherman-Morrison update per basis vector.

    Cost is O(s n^2) with s the total number of basis vectors.  When
    ``with_logdet`` is set the matrix-determinant lemma factors are accumulated
    as well and ``(Ginv, logdet)`` is returned.
    """
    n = g.n
    # Fortran order so BLAS dger updates in place
    Ginv = np.asfortranarray(np.eye(n))
    logdet = 0.0
    for t, h in zip(g.theta, g.hats):
        if t == 0.0:
            continue
        for j in range(h.rank):
            u = h.basis[:, j]
            tw = t * h.weights[j]
            v = Ginv @ u
            denom = 1.0 - tw * np.dot(u, v)
            if abs(denom) < 1e-12:
                raise InfeasibleThetaError("singular update")
            if with_logdet:
                if denom <= 0:
                    raise InfeasibleThetaError("infeasible theta")
                logdet += np.log(denom)
            Ginv = dger(tw / denom, v, v, a=Ginv, overwrite_a=True)
    if with_logdet:
        return np.asarray(Ginv), logdet
    return np.asarray(Ginv)


def log_det_G(g: GTheta) -> float:
    """log|G(theta)| through the eigenvalues of the small Gram form."""
    return HatStack(g.hats).log_det(g.theta)


@dataclass(eq=False)
class HatStack:
    """Concatenated hat bases with the Gram quantities needed for G(theta).

    Writing ``U = [U_1, ..., U_K]`` and ``C = U^T U = L L^T``, the non-unit
    eigenvalues of G(theta) are ``1 - eig(L^T D L)`` with ``D`` the diagonal of
    ``theta_{g(j)} w_j``.  Everything below stays in this s-dimensional space.
    """

    hats: Sequence[HatOperator]
    U: np.ndarray = field(init=False)
    w: np.ndarray = field(init=False)
    group_of: np.ndarray = field(init=False)
    C: np.ndarray = field(init=False)
    L: np.ndarray = field(init=False)

    def __post_init__(self):
        self.hats = tuple(self.hats)
        self.K = len(self.hats)
        self.U = np.hstack([h.basis for h in self.hats])
        self.w = np.concatenate([h.weights for h in self.hats])
        self.sizes = np.array([h.rank for h in self.hats])
        self.group_of = np.repeat(np.arange(self.K), self.sizes)
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        self.indicator = np.zeros((self.U.shape[1], self.K))
        self.indicator[np.arange(self.U.shape[1]), self.group_of] = 1.0
        self.C = self.U.T @ self.U
        evals, evecs = np.linalg.eigh(self.C)
        top = evals.max() if evals.size else 0.0
        keep = evals > RANK_TOL * max(top, 1.0)
        self.L = evecs[:, keep] * np.sqrt(evals[keep])
        self.ones = self.U.sum(axis=0)

    @property
    def s(self) -> int:
        return self.U.shape[1]

    def spectrum(self, theta):
        d = np.asarray(theta, dtype=float)[self.group_of] * self.w
        M = self.L.T @ (d[:, None] * self.L)
        return np.linalg.eigh(M)

    def min_eig(self, theta) -> float:
        if self.L.shape[1] == 0:
            return 1.0
        lam, _ = self.spectrum(theta)
        # unit eigenvalues remain whenever span(U) is a proper subspace
        low = 1.0 - lam.max()
        return low if self.L.shape[1] >= self.U.shape[0] else min(low, 1.0)

    def log_det(self, theta) -> float:
        lam, _ = self.spectrum(theta)
        gaps = 1.0 - lam
        if gaps.size and gaps.min() <= 1e-12:
            raise InfeasibleThetaError("infeasible theta")
        return float(np.sum(np.log(gaps)))

    def evaluate(self, theta, derivatives: bool = True):
        """Return ``(log|G|, tr(G^-1 H_k), tr(G^-1 H_k G^-1 H_l))``.

        A Cholesky factor of ``I - M - margin I`` doubles as the feasibility
        test; it is several times cheaper than an eigendecomposition.
        """
        r = self.L.shape[1]
        if r == 0:
            zeros = np.zeros(self.K)
            return 0.0, (zeros if derivatives else None), (np.zeros((self.K, self.K)) if derivatives else None)
        d = np.asarray(theta, dtype=float)[self.group_of] * self.w
        S_mat = np.eye(r) - self.L.T @ (d[:, None] * self.L)
        try:
            linalg.cholesky(S_mat - FEASIBILITY_MARGIN * np.eye(r), lower=True,
                            overwrite_a=True, check_finite=False)
            R = linalg.cholesky(S_mat, lower=True, check_finite=False)
        except linalg.LinAlgError:
            raise InfeasibleThetaError("infeasible theta") from None
        logdet = 2.0 * float(np.sum(np.log(np.diag(R))))
        if not derivatives:
            return logdet, None, None
        # Gamma = U^T G^-1 U = L (I - M)^-1 L^T
        W = linalg.solve_triangular(R, self.L.T, lower=True, check_finite=False)
        gamma = W.T @ W
        t = np.bincount(self.group_of, weights=self.w * np.diag(gamma), minlength=self.K)
        S = (self.w[:, None] * gamma * self.w[None, :]) * gamma
        T = self.indicator.T @ S @ self.indicator
        return logdet, t, T

    def project(self, y: np.ndarray) -> np.ndarray:
        """Basis coordinates U^T y (rows of a matrix are treated as responses)."""
        if y.ndim == 1:
            return self.U.T @ y
        return y @ self.U

    def prototype_stats(self, c: np.ndarray):
        """Return ``(Yhat^T Yhat, Yhat^T y, 1^T Yhat)`` from basis coordinates."""
        v = self.w * c
        A = self.indicator.T @ (v[:, None] * self.C * v[None, :]) @ self.indicator
        a = np.bincount(self.group_of, weights=v * c, minlength=self.K)
        m = np.bincount(self.group_of, weights=self.ones * v, minlength=self.K)
        return A, a, m

    def trace_products(self) -> np.ndarray:
        """tr(H_k H_l) for all pairs."""
        S = (self.w[:, None] * self.C * self.w[None, :]) * self.C
        return self.indicator.T @ S @ self.indicator


def dense_inverse_terms(stack: HatStack, Ginv: np.ndarray):
    """Trace terms of the likelihood derivatives from an explicit G^-1."""
    W = Ginv @ stack.U
    gamma = stack.U.T @ W
    t = np.bincount(stack.group_of, weights=stack.w * np.diag(gamma), minlength=stack.K)
    S = (stack.w[:, None] * gamma * stack.w[None, :]) * gamma
    return t, stack.indicator.T @ S @ stack.indicator
