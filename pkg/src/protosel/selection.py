"""Selection procedures and their affine selection events {y : A y <= b}."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

log = logging.getLogger(__name__)

CD_TOL = 1e-10
CD_MAX_SWEEPS = 100_000


@dataclass(frozen=True, eq=False)
class SelectionEvent:
    A: np.ndarray
    b: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise ValueError("A and b have different numbers of rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_constraints(self) -> int:
        return self.A.shape[0]

    def slack(self, y) -> np.ndarray:
        return self.b - self.A @ y

    def contains(self, y, tol: float = 1e-8) -> bool:
        return bool(np.all(self.slack(y) >= -tol))


def empty_event(n: int) -> SelectionEvent:
    return SelectionEvent(np.zeros((0, n)), np.zeros(0), {"procedure": "none"})


def stack_events(events) -> SelectionEvent:
    """Intersection of events: rows are concatenated."""
    events = list(events)
    A = np.vstack([e.A for e in events])
    b = np.concatenate([e.b for e in events])
    return SelectionEvent(A, b, {"procedure": "stacked", "parts": [e.meta for e in events]})


@dataclass(frozen=True)
class LassoSelection:
    group: int
    lam: float
    active: np.ndarray
    signs: np.ndarray
    beta: np.ndarray

    @property
    def size(self) -> int:
        return int(self.active.size)


def lasso_cd(gram: np.ndarray, xty: np.ndarray, lam: float, beta0=None,
             tol: float = CD_TOL) -> np.ndarray:
    """Cyclic coordinate descent for 1/2 ||y - X b||^2 + lam ||b||_1 in covariance form."""
    p = xty.shape[0]
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    diag = np.diag(gram).copy()
    grad = xty - gram @ beta  # X^T (y - X beta)
    sweeps = 0
    full = True
    while sweeps < CD_MAX_SWEEPS:
        sweeps += 1
        idx = range(p) if full else np.flatnonzero(beta)
        delta_max = 0.0
        for j in idx:
            old = beta[j]
            z = grad[j] + diag[j] * old
            if z > lam:
                new = (z - lam) / diag[j]
            elif z < -lam:
                new = (z + lam) / diag[j]
            else:
                new = 0.0
            if new != old:
                d = new - old
                beta[j] = new
                grad -= d * gram[:, j]
                delta_max = max(delta_max, abs(d))
        if delta_max < tol:
            if full:
                break
            full = True
        else:
            full = False if np.any(beta) else True
    return beta


def lasso_cd_batch(gram: np.ndarray, XtY: np.ndarray, lam: float,
                   tol: float = CD_TOL) -> np.ndarray:
    """:func:`lasso_cd` for many responses at once (rows of ``XtY``), full sweeps."""
    B, p = XtY.shape
    beta = np.zeros((B, p))
    grad = XtY.copy()
    diag = np.diag(gram)
    for _ in range(CD_MAX_SWEEPS):
        delta_max = 0.0
        for j in range(p):
            z = grad[:, j] + diag[j] * beta[:, j]
            new = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0) / diag[j]
            d = new - beta[:, j]
            if np.any(d):
                beta[:, j] = new
                grad -= d[:, None] * gram[j][None, :]
                delta_max = max(delta_max, float(np.abs(d).max()))
        if delta_max < tol:
            break
    return beta


def lasso_fixed_lambda(X_sub, y, lam: float, group: int = 0, beta0=None) -> LassoSelection:
    """Lasso at a fixed penalty; the active set and signs define the prototype."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    X_sub = np.asarray(X_sub, dtype=float)
    beta = lasso_cd(X_sub.T @ X_sub, X_sub.T @ y, lam, beta0)
    active = np.flatnonzero(beta)
    return LassoSelection(group, float(lam), active, np.sign(beta[active]).astype(int), beta)


def lasso_event(sel: LassoSelection, X_sub, lam: float | None = None) -> SelectionEvent:
    """Polyhedral description of {y : lasso at lam selects (active, signs)}.

    An empty active set gives the box |X_sub^T y| <= lam.
    """
    lam = sel.lam if lam is None else lam
    X_sub = np.asarray(X_sub, dtype=float)
    n, m = X_sub.shape
    M = sel.active
    inactive = np.setdiff1d(np.arange(m), M)
    meta = {"procedure": "lasso", "lambda": lam, "group": sel.group,
            "active": M.tolist(), "signs": sel.signs.tolist()}
    if M.size == 0:
        Xi = X_sub
        A = np.vstack([Xi.T / lam, -Xi.T / lam])
        b = np.ones(2 * m)
        return SelectionEvent(A, b, meta)
    XM = X_sub[:, M]
    s = sel.signs.astype(float)
    gram = XM.T @ XM
    if np.linalg.matrix_rank(gram) < M.size:
        raise ValueError("degenerate active set")
    gram_inv = np.linalg.inv(gram)
    pinv = gram_inv @ XM.T  # (X_M^T X_M)^-1 X_M^T
    A_sign = -s[:, None] * pinv
    b_sign = -lam * s * (gram_inv @ s)
    if inactive.size:
        Xi = X_sub[:, inactive]
        resid_proj = Xi.T - (Xi.T @ XM) @ pinv  # X_{-M}^T (I - P_M)
        shift = Xi.T @ XM @ gram_inv @ s
        A = np.vstack([A_sign, resid_proj / lam, -resid_proj / lam])
        b = np.concatenate([b_sign, 1.0 - shift, 1.0 + shift])
    else:
        A, b = A_sign, b_sign
    return SelectionEvent(A, b, meta)


def marginal_screen_event(X, y):
    """Select i* = argmax |x_i^T y| and encode (i*, sign) as A y <= 0."""
    X = np.asarray(X, dtype=float)
    scores = X.T @ y
    absval = np.abs(scores)
    i_star = int(np.argmax(absval))
    ties = np.flatnonzero(absval == absval[i_star])
    sgn = 1.0 if scores[i_star] >= 0 else -1.0
    x = sgn * X[:, i_star]
    others = np.delete(X, i_star, axis=1).T
    A = np.vstack([-(x[None, :] - others), -(x[None, :] + others), -x[None, :]])
    meta = {"procedure": "marginal_screen", "i_star": i_star, "sign": int(sgn),
            "tie": bool(ties.size > 1)}
    return i_star, SelectionEvent(A, np.zeros(A.shape[0]), meta)


def calibrate_lambda(X_sub, target_count: int, sigma2: float = 1.0, trials: int = 100,
                     rng=None, max_steps: int = 60):
    """Bisection (in log lambda) so null responses select ~target_count columns.

    Returns ``(lam, mean_active_size, reached)``.  The returned penalty is meant
    to stay fixed for every later replication.
    """
    X_sub = np.asarray(X_sub, dtype=float)
    n, m = X_sub.shape
    if not 1 <= target_count <= m:
        raise ValueError("target_count must lie in [1, m]")
    rng = np.random.default_rng(rng)
    sigma = np.sqrt(sigma2)
    Y = sigma * rng.standard_normal((trials, n))
    gram = X_sub.T @ X_sub
    XtY = Y @ X_sub

    def mean_size(lam):
        return float(np.count_nonzero(lasso_cd_batch(gram, XtY, lam)) / trials)

    lo = 1e-6 * sigma
    hi = float(np.abs(XtY).max()) * 1.01
    best = (np.inf, hi, 0.0)
    for _ in range(max_steps):
        mid = np.sqrt(lo * hi)
        size = mean_size(mid)
        err = abs(size - target_count)
        if err < best[0]:
            best = (err, mid, size)
        if err < 0.5:
            break
        if size > target_count:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-9:
            break
    err, lam, size = best
    reached = err <= 1.0
    if not reached:
        warnings.warn(f"lambda calibration missed target {target_count}: mean size {size:.2f}")
    return lam, size, reached


def orthonormal_lambda(m: int, target_count: float, sigma: float = 1.0) -> float:
    """lam with E #{|N(0, sigma^2)| > lam} = target_count over m columns."""
    return float(sigma * ndtri(1.0 - target_count / (2.0 * m)))
