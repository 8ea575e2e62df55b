"""Prototype-model log-likelihood and its constrained Newton-Raphson maximizer.

The log-likelihood (constants omitted) is

    l(theta, mu) = log|G(theta)| - ||G(theta) y - mu 1||^2 / (2 sigma^2)

with ``G(theta) y = y - Yhat theta``.  When the intercept is enabled ``mu`` is
profiled out, which amounts to centering ``y`` and the prototypes in the
quadratic term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linear_core import (
    FEASIBILITY_MARGIN,
    GroupedDesign,
    GTheta,
    HatOperator,
    HatStack,
    InfeasibleThetaError,
    dense_inverse_terms,
    sherman_morrison_inverse,
)

MAX_ITER = 100
MAX_HALVINGS = 50
GRAD_TOL = 1e-8
# a small gradient alone is loose where the objective is flat (large |theta|)
STEP_TOL = 1e-10
ARMIJO_C1 = 1e-4
# beyond this the objective is running off to -inf (no finite maximizer)
THETA_DIVERGED = 1e6


@dataclass(eq=False)
class PrototypeLikelihood:
    hats: list[HatOperator]
    y: np.ndarray
    sigma2: float = 1.0
    intercept_enabled: bool = False
    design: GroupedDesign | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.hats = list(self.hats)
        if not self.hats:
            raise ValueError("at least one prototype is required")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if any(h.n != self.y.shape[0] for h in self.hats):
            raise ValueError("hat dimensions do not match length of y")
        self._stack = None

    @property
    def K(self) -> int:
        return len(self.hats)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def stack(self) -> HatStack:
        if self._stack is None:
            self._stack = HatStack(self.hats)
        return self._stack

    def prototypes(self) -> np.ndarray:
        """Yhat with columns H_k y."""
        return np.column_stack([h.apply(self.y) for h in self.hats])

    def objective(self, method: str = "gram") -> "ProfiledObjective":
        Y = self.prototypes()
        y = self.y
        if self.intercept_enabled:
            Y = Y - Y.mean(axis=0)
            y = y - y.mean()
        return ProfiledObjective(
            make_solver(self.stack, method), Y.T @ Y, Y.T @ y, float(y @ y), self.sigma2
        )


@dataclass
class FitResult:
    theta_hat: np.ndarray
    mu_hat: float
    loglik_at_opt: float
    iterations: int
    converged: bool
    gradient_norm_final: float
    loglik_trace: list[float] = field(default_factory=list)


class GramSolver:
    """log|G|, tr(G^-1 H_k) and tr(G^-1 H_k G^-1 H_l) in the s-dimensional Gram form."""

    def __init__(self, stack: HatStack):
        self.stack = stack

    def __call__(self, theta, derivatives=True):
        return self.stack.evaluate(theta, derivatives)


class DenseSolver:
    """Explicit n x n G(theta): eigenvalues for log|G|, LU inverse for traces."""

    def __init__(self, stack: HatStack):
        self.stack = stack
        self.hats = stack.hats

    def __call__(self, theta, derivatives=True):
        G = GTheta(theta, self.hats).dense()
        evals = np.linalg.eigvalsh(G)
        if evals[0] < FEASIBILITY_MARGIN:
            raise InfeasibleThetaError("infeasible theta")
        logdet = float(np.sum(np.log(evals)))
        if not derivatives:
            return logdet, None, None
        t, T = dense_inverse_terms(self.stack, np.linalg.inv(G))
        return logdet, t, T


class ShermanMorrisonSolver:
    """Iterative rank-one inverse; the determinant lemma gives log|G| for free."""

    def __init__(self, stack: HatStack):
        self.stack = stack
        self.hats = stack.hats

    def __call__(self, theta, derivatives=True):
        Ginv, logdet = sherman_morrison_inverse(GTheta(theta, self.hats), with_logdet=True)
        if not derivatives:
            return logdet, None, None
        t, T = dense_inverse_terms(self.stack, Ginv)
        return logdet, t, T


SOLVERS = {"gram": GramSolver, "dense": DenseSolver, "sherman_morrison": ShermanMorrisonSolver}


def make_solver(stack: HatStack, method: str = "gram"):
    try:
        return SOLVERS[method](stack)
    except KeyError:
        raise ValueError(f"unknown solver {method!r}") from None


@dataclass(eq=False)
class ProfiledObjective:
    """Negative log-likelihood as a function of theta only.

    ``A = Yhat^T Yhat``, ``a = Yhat^T y`` and ``yy = y^T y`` (centered versions
    when the intercept is profiled).
    """

    solver: object
    A: np.ndarray
    a: np.ndarray
    yy: float
    sigma2: float

    def rss(self, theta) -> float:
        return self.yy - 2.0 * self.a @ theta + theta @ self.A @ theta

    def value(self, theta) -> float:
        logdet, _, _ = self.solver(theta, derivatives=False)
        return -logdet + self.rss(theta) / (2.0 * self.sigma2)

    def value_grad_hess(self, theta):
        logdet, t, T = self.solver(theta, derivatives=True)
        f = -logdet + self.rss(theta) / (2.0 * self.sigma2)
        g = (self.A @ theta - self.a) / self.sigma2 + t
        H = self.A / self.sigma2 + T
        return f, g, H


def newton_minimize(obj: ProfiledObjective, K: int, free=None, theta0=None,
                    max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> FitResult:
    """Damped Newton on the free coordinates, staying inside the PD cone."""
    free = np.arange(K) if free is None else np.asarray(sorted(free), dtype=int)
    theta = np.zeros(K)
    if theta0 is not None:
        start = np.zeros(K)
        start[free] = np.asarray(theta0, dtype=float)[free]
        try:
            obj.value(start)
            theta = start
        except InfeasibleThetaError:
            pass
    if free.size == 0:
        f = obj.value(theta)
        return FitResult(theta, 0.0, -f, 0, True, 0.0, [-f])

    f, g, H = obj.value_grad_hess(theta)
    trace = [-f]
    it = 0
    while True:
        gf = g[free]
        gnorm = float(np.linalg.norm(gf))
        Hf = H[np.ix_(free, free)]
        try:
            step = np.linalg.solve(Hf, -gf)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(Hf, -gf, rcond=None)[0]
        converged = gnorm < tol and (
            float(np.abs(step).max()) < STEP_TOL * max(1.0, float(np.abs(theta).max()))
            or gnorm == 0.0)
        if converged or it >= max_iter:
            break
        it += 1
        slope = float(gf @ step)
        if slope >= 0:
            step, slope = -gf, -float(gf @ gf)
        # slack for round-off once f is flat to machine precision
        noise = 1e-13 * max(1.0, abs(f))
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            cand = theta.copy()
            cand[free] += t * step
            try:
                fc = obj.value(cand)
            except InfeasibleThetaError:
                t *= 0.5
                continue
            if fc <= f + ARMIJO_C1 * t * slope + noise:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no further descent possible: at the round-off floor if the gradient is small
            converged = gnorm < tol
            break
        theta = cand
        f, g, H = obj.value_grad_hess(theta)
        trace.append(-f)
        if np.abs(theta).max() > THETA_DIVERGED:
            gnorm = float(np.linalg.norm(g[free]))
            break
    return FitResult(theta, 0.0, -f, it, converged, gnorm, trace)


def _with_mu(pl: PrototypeLikelihood, fit: FitResult) -> FitResult:
    if pl.intercept_enabled:
        Gy = pl.y - pl.prototypes() @ fit.theta_hat
        fit.mu_hat = float(Gy.mean())
    return fit


def loglik(pl: PrototypeLikelihood, theta, mu: float = 0.0) -> float:
    """log|G(theta)| - ||G(theta) y - mu 1||^2 / (2 sigma^2)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    logdet = pl.stack.log_det(theta)
    resid = pl.y - pl.prototypes() @ theta - mu
    return logdet - float(resid @ resid) / (2.0 * pl.sigma2)


def grad_hess(pl: PrototypeLikelihood, theta, method: str = "gram"):
    """Gradient and Hessian of the negative (profiled) log-likelihood."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    _, g, H = pl.objective(method).value_grad_hess(theta)
    return g, H


def fit_mle(pl: PrototypeLikelihood, method: str = "gram", theta0=None) -> FitResult:
    if not np.any(pl.y):
        raise ValueError("y is identically zero")
    fit = newton_minimize(pl.objective(method), pl.K, theta0=theta0)
    return _with_mu(pl, fit)


def fit_mle_restricted(pl: PrototypeLikelihood, fixed_zero, method: str = "gram",
                       theta0=None) -> FitResult:
    """As :func:`fit_mle` with the coordinates in ``fixed_zero`` pinned at 0."""
    if not np.any(pl.y):
        raise ValueError("y is identically zero")
    fixed = set(int(k) for k in fixed_zero)
    free = [k for k in range(pl.K) if k not in fixed]
    fit = newton_minimize(pl.objective(method), pl.K, free=free, theta0=theta0)
    return _with_mu(pl, fit)


def likelihood_ratio(obj: ProfiledObjective, K: int, drop: int, warm=None):
    """2 (max l - max_{theta_drop = 0} l) with optional warm starts.

    Returns ``(R, full_fit, restricted_fit)``.
    """
    w_full, w_rest = (None, None) if warm is None else warm
    full = newton_minimize(obj, K, theta0=w_full)
    rest = newton_minimize(obj, K, free=[k for k in range(K) if k != drop], theta0=w_rest)
    return 2.0 * (full.loglik_at_opt - rest.loglik_at_opt), full, rest
