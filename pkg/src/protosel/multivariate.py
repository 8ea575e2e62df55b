"""Tests of H0: theta_1 = 0 in the multivariate prototype model with K groups.

Nuisance parameters of the other groups are removed by conditioning on
delta = P y, the projection of y on the union of the other groups' selected
columns.  Under H0 the remaining law is N(0, sigma^2 I) restricted to the
selection polytope after the shift, supported on the complement of P:

    y~ = Q w + delta,   w ~ N(0, sigma^2 I_{n-r}),   A Q w <= b - A delta

with Q an orthonormal basis of range(I - P).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .likelihood import ProfiledObjective, likelihood_ratio, make_solver
from .linear_core import GroupedDesign, HatOperator, HatStack, make_hat, orthonormal_basis
from .sampler import ConstrainedGaussian, HitAndRunConfig, hit_and_run
from .selection import SelectionEvent, lasso_event, lasso_fixed_lambda, stack_events
from .univariate import TestResult, hr_pvalue, unsupervised_prototype

MULTIVARIATE_METHODS = ("ALR-lasso", "ELR-lasso", "F", "ALR-all", "ALR-or", "F-all",
                        "t-mean", "t-PC")
SAMPLED_METHODS = ("ALR-lasso", "ELR-lasso", "F")
CONDITIONING_TOL = 1e-8


@dataclass(eq=False)
class ConditionedNull:
    P_minus1: np.ndarray
    delta: np.ndarray
    A_tilde: np.ndarray
    b_tilde: np.ndarray
    complement: np.ndarray  # Q, orthonormal basis of range(I - P)

    def target(self, sigma: float) -> ConstrainedGaussian:
        """Constrained Gaussian for w, the coordinates of y~ - delta in Q."""
        event = SelectionEvent(self.A_tilde @ self.complement, self.b_tilde)
        return ConstrainedGaussian(np.zeros(self.complement.shape[1]), event, scale=sigma)

    def to_response(self, W) -> np.ndarray:
        return W @ self.complement.T + self.delta

    def start(self, y) -> np.ndarray:
        return self.complement.T @ (y - self.delta)


def build_conditioned_null(event: SelectionEvent, nuisance_columns, y) -> ConditionedNull:
    """Condition on delta = P y with P the projection on ``nuisance_columns``."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    Xn = np.asarray(nuisance_columns, dtype=float).reshape(n, -1)
    if Xn.shape[1]:
        B, _ = orthonormal_basis(Xn)
    else:
        B = np.zeros((n, 0))
    P = B @ B.T
    delta = P @ y
    # complement basis: trailing left singular vectors of [B | 0]
    full = np.linalg.svd(B, full_matrices=True)[0] if B.shape[1] else np.eye(n)
    Q = full[:, B.shape[1]:]
    A_tilde = event.A - (event.A @ B) @ B.T
    b_tilde = event.b - event.A @ delta
    eps = y - delta
    slack = b_tilde - A_tilde @ eps
    if slack.size and slack.min() < -CONDITIONING_TOL * max(1.0, np.abs(event.b).max()):
        raise RuntimeError("conditioning bug: observed response violates the constraints")
    return ConditionedNull(P, delta, A_tilde, b_tilde, Q)


def _quadratic_form(u, V):
    """u^T V^-1 u over a trailing batch; raises if V is singular."""
    try:
        sol = np.linalg.solve(V, u[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("degenerate prototype Gram") from None
    return np.einsum("...k,...k->...", u, sol)


def alr_from_stats(A, a, g, Htr, sigma2: float, drop: int):
    """Closed-form ALR from Yhat^T Yhat, Yhat^T y, tr(H_k) and tr(H_k H_l).

    Works on a single instance or on a leading batch axis.
    """
    u = a / sigma2 - g
    V = A / sigma2 + Htr
    keep = [k for k in range(u.shape[-1]) if k != drop]
    full = _quadratic_form(u, V)
    if keep:
        rest = _quadratic_form(u[..., keep], V[..., keep, :][..., :, keep])
    else:
        rest = 0.0
    return full - rest


def alr_multivariate(y, hats, sizes, sigma2: float, drop: int) -> float:
    """ALR statistic for H0: theta_drop = 0; ``sizes`` are tr(H_k) = |S_k|."""
    y = np.asarray(y, dtype=float)
    stack = HatStack(list(hats))
    A, a, _ = stack.prototype_stats(stack.U.T @ y)
    return float(alr_from_stats(A, a, np.asarray(sizes, dtype=float),
                                stack.trace_products(), sigma2, drop))


def elr_multivariate(y, hats, sigma2: float, drop: int, method: str = "sherman_morrison",
                     warm=None):
    """Exact LR 2 (max l - max_{theta_drop = 0} l) as ``(R, flags, (full, rest))``."""
    y = np.asarray(y, dtype=float)
    stack = HatStack(list(hats))
    obj = _objective(stack, stack.U.T @ y, float(y @ y), sigma2, method)
    R, full, rest = likelihood_ratio(obj, stack.K, drop, warm)
    flags = set() if (full.converged and rest.converged) else {"non-converged"}
    return max(R, 0.0) if R > -1e-10 else R, flags, (full, rest)


def _objective(stack, c, yy, sigma2, method="gram", solver=None):
    A, a, _ = stack.prototype_stats(c)
    return ProfiledObjective(solver or make_solver(stack, method), A, a, yy, sigma2)


@dataclass
class GroupSelection:
    """Per-group lasso outcomes and the prototypes they define."""

    selections: list
    events: list
    hats: list  # None where a group selected nothing

    @property
    def active_groups(self) -> list[int]:
        return [k for k, h in enumerate(self.hats) if h is not None]

    def columns(self, design: GroupedDesign, k: int) -> np.ndarray:
        return np.asarray(design.groups[k])[self.selections[k].active]


def select_groups(design: GroupedDesign, y, lams) -> GroupSelection:
    lams = np.broadcast_to(np.asarray(lams, dtype=float), (design.K,))
    sels, events, hats = [], [], []
    for k in range(design.K):
        Xk = design.group_matrix(k)
        sel = lasso_fixed_lambda(Xk, y, float(lams[k]), group=k)
        sels.append(sel)
        events.append(lasso_event(sel, Xk, float(lams[k])))
        hats.append(make_hat(Xk[:, sel.active], "lasso_refit", columns=sel.active)
                    if sel.size else None)
    return GroupSelection(sels, events, hats)


def _stats_batch(hats, Y):
    """Yhat^T Yhat and Yhat^T y for each row of Y."""
    Yh = np.stack([((Y @ h.basis) * h.weights) @ h.basis.T for h in hats], axis=2)
    A = np.einsum("bnk,bnl->bkl", Yh, Yh)
    a = np.einsum("bnk,bn->bk", Yh, Y)
    return A, a


def _f_selective(Y, P_full_basis, P_minus_basis, size1, dfd):
    def q(Bs):
        return np.sum((Y @ Bs) ** 2, axis=-1) if Bs.shape[1] else np.zeros(Y.shape[:-1])
    num = (q(P_full_basis) - q(P_minus_basis)) / size1
    den = (np.sum(Y * Y, axis=-1) - q(P_full_basis)) / dfd
    return num / den


def _t_joint(X_protos, y):
    """t-test of the first coefficient of y on the columns of X_protos; df n - K."""
    y = y - y.mean()
    n, K = X_protos.shape
    coef, *_ = np.linalg.lstsq(X_protos, y, rcond=None)
    resid = y - X_protos @ coef
    s2 = float(resid @ resid) / (n - K)
    cov = s2 * np.linalg.inv(X_protos.T @ X_protos)
    t = coef[0] / math.sqrt(cov[0, 0])
    return float(t), float(2.0 * special.stdtr(n - K, -abs(t)))


def _order_first(K, tested):
    return [tested] + [k for k in range(K) if k != tested]


def run_multivariate_tests(methods, design: GroupedDesign, y, sigma2: float = 1.0, lams=None,
                           cfg: HitAndRunConfig | None = None, tested: int = 0,
                           oracle_supports=None, elr_method: str = "gram",
                           smoothed: bool = False) -> dict:
    """Run several multivariate methods on one response sharing selection and chain.

    ``oracle_supports[k]`` are column positions within group k.
    """
    methods = list(methods)
    unknown = set(methods) - set(MULTIVARIATE_METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    y = np.asarray(y, dtype=float)
    n, K = design.n, design.K
    cfg = cfg or HitAndRunConfig()
    sigma = math.sqrt(sigma2)
    out = {}

    sampled = [m for m in methods if m in SAMPLED_METHODS]
    if sampled:
        if lams is None:
            raise ValueError("lasso-based methods need lambda")
        gs = select_groups(design, y, lams)
        ref = f"sampled({cfg.n_samples},{cfg.burn_in},{cfg.seed})"
        if gs.hats[tested] is None:
            for m in sampled:
                out[m] = TestResult(math.nan, 1.0, m, ref, {"no-selection"}, cfg.seed)
        else:
            out.update(_sampled_tests(sampled, design, y, sigma2, sigma, gs, cfg, tested,
                                      elr_method, smoothed, ref))

    for m in methods:
        if m in out:
            continue
        if m in ("ALR-all", "ALR-or"):
            if m == "ALR-all":
                supports = [np.arange(len(g)) for g in design.groups]
            else:
                if oracle_supports is None:
                    raise ValueError("ALR-or needs oracle supports")
                supports = [np.asarray(s, dtype=int) for s in oracle_supports]
            if supports[tested].size == 0:
                out[m] = TestResult(math.nan, 1.0, m, "analytic", {"no-selection"})
                continue
            order = [k for k in _order_first(K, tested) if supports[k].size]
            hats = [make_hat(design.group_matrix(k)[:, supports[k]], "least_squares")
                    for k in order]
            stat = alr_multivariate(y, hats, [h.rank for h in hats], sigma2, 0)
            out[m] = TestResult(stat, float(special.chdtrc(1, max(stat, 0.0))), m, "analytic")
        elif m == "F-all":
            order = _order_first(K, tested)
            Xall = np.hstack([design.group_matrix(k) for k in order])
            B_full, _ = orthonormal_basis(Xall)
            rest = np.hstack([design.group_matrix(k) for k in order[1:]]) if K > 1 else np.zeros((n, 0))
            B_rest = orthonormal_basis(rest)[0] if rest.shape[1] else np.zeros((n, 0))
            dfn = B_full.shape[1] - B_rest.shape[1]
            dfd = n - B_full.shape[1]
            if dfd <= 0 or dfn <= 0:
                raise ValueError("F-all needs n > rank(X) and a tested group of positive rank")
            stat = float(_f_selective(y, B_full, B_rest, dfn, dfd))
            out[m] = TestResult(stat, float(special.fdtrc(dfn, dfd, stat)), m, "analytic",
                                set(), None, {"df": (dfn, dfd)})
        else:
            kind = "mean" if m == "t-mean" else "pc"
            protos = np.column_stack([unsupervised_prototype(design.group_matrix(k), kind)
                                      for k in _order_first(K, tested)])
            t, pval = _t_joint(protos, y)
            out[m] = TestResult(t, pval, m, "analytic")
    return {m: out[m] for m in methods}


def _sampled_tests(sampled, design, y, sigma2, sigma, gs, cfg, tested, elr_method,
                   smoothed, ref):
    n = design.n
    events = stack_events(gs.events)
    order = [k for k in _order_first(design.K, tested) if gs.hats[k] is not None]
    hats = [gs.hats[k] for k in order]
    nuisance = [design.group_matrix(k)[:, gs.selections[k].active] for k in order[1:]]
    Xn = np.hstack(nuisance) if nuisance else np.zeros((n, 0))
    null = build_conditioned_null(events, Xn, y)
    W = hit_and_run(null.target(sigma), null.start(y), cfg)
    Y = null.to_response(W)
    worst = (Y @ events.A.T - events.b).max() if events.n_constraints else 0.0
    if worst > 1e-8 * max(1.0, np.abs(events.b).max()):
        raise RuntimeError("conditioned samples leave the selection event")

    stack = HatStack(hats)
    sizes = np.array([h.trace for h in hats])
    Htr = stack.trace_products()
    extra = {"M": [h.rank for h in hats], "groups": order,
             "active": gs.selections[tested].active.tolist()}
    out = {}
    if "ALR-lasso" in sampled:
        A, a, _ = stack.prototype_stats(stack.U.T @ y)
        stat = float(alr_from_stats(A, a, sizes, Htr, sigma2, 0))
        As, as_ = _stats_batch(hats, Y)
        reps = alr_from_stats(As, as_, sizes, Htr, sigma2, 0)
        out["ALR-lasso"] = TestResult(stat, hr_pvalue(stat, reps, smoothed), "ALR-lasso", ref,
                                      set(), cfg.seed, dict(extra))
    if "ELR-lasso" in sampled:
        solver = make_solver(stack, elr_method)
        obj = _objective(stack, stack.U.T @ y, float(y @ y), sigma2, solver=solver)
        stat, full, rest = likelihood_ratio(obj, stack.K, 0)
        flags = set() if (full.converged and rest.converged) else {"non-converged"}
        warm = (full.theta_hat, rest.theta_hat)
        reps = np.empty(Y.shape[0])
        Cs = Y @ stack.U
        for i, yi in enumerate(Y):
            o = _objective(stack, Cs[i], float(yi @ yi), sigma2, solver=solver)
            reps[i], f_i, r_i = likelihood_ratio(o, stack.K, 0, warm)
            if f_i.converged and r_i.converged:
                warm = (f_i.theta_hat, r_i.theta_hat)
            else:
                flags.add("non-converged")
        out["ELR-lasso"] = TestResult(float(stat), hr_pvalue(stat, reps, smoothed), "ELR-lasso",
                                      ref, flags, cfg.seed, dict(extra))
    if "F" in sampled:
        union = np.hstack([design.group_matrix(k)[:, gs.selections[k].active] for k in order])
        B_full, _ = orthonormal_basis(union)
        B_rest = orthonormal_basis(Xn)[0] if Xn.shape[1] else np.zeros((n, 0))
        size1 = gs.selections[tested].size
        dfd = n - B_full.shape[1]
        if dfd <= 0:
            raise ValueError("selected columns span R^n; F is undefined")
        stat = float(_f_selective(y, B_full, B_rest, size1, dfd))
        reps = _f_selective(Y, B_full, B_rest, size1, dfd)
        out["F"] = TestResult(stat, hr_pvalue(stat, reps, smoothed), "F", ref, set(), cfg.seed,
                              dict(extra))
    return out


def run_multivariate_test(method: str, design: GroupedDesign, y, sigma2: float = 1.0,
                          lams=None, cfg: HitAndRunConfig | None = None, tested: int = 0,
                          oracle_supports=None, elr_method: str = "gram",
                          smoothed: bool = False) -> TestResult:
    return run_multivariate_tests([method], design, y, sigma2, lams, cfg, tested,
                                  oracle_supports, elr_method, smoothed)[method]
