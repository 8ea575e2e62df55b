"""Tests of H0: theta_1 = 0 for a single group in the univariate prototype model.

The lasso-based tests share one selection per response: the lasso at a fixed
penalty picks an active set, the prototype is the least-squares fit on it and
the selection event is conditioned on.  Sampled references reuse that fixed
(H, M) for every chain state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import truncation as tr
from .likelihood import PrototypeLikelihood, fit_mle, loglik
from .linear_core import HatOperator, make_hat
from .sampler import ConstrainedGaussian, HitAndRunConfig, hit_and_run
from .selection import lasso_event, lasso_fixed_lambda, marginal_screen_event

UNIVARIATE_METHODS = ("ELR-HR", "ELR-Chi", "ALR-HR", "ALR-Exact", "PT", "F", "F-HR",
                      "LR-all", "LR-or", "t-mean", "t-PC")
HR_METHODS = ("ELR-HR", "ALR-HR", "F-HR")
LASSO_METHODS = ("ELR-HR", "ELR-Chi", "ALR-HR", "ALR-Exact", "F", "F-HR")
MIN_QUADRATIC = 1e-14


@dataclass
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    statistic: float
    p_value: float
    method: str
    reference: str
    flags: set = field(default_factory=set)
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")


def elr_statistic(y, H: HatOperator, M: int, sigma2: float) -> float:
    """Exact LR for a projection prototype: closed form in y^T H y."""
    if M < 1:
        raise ValueError("M must be >= 1")
    q = H.quadratic(y) if isinstance(H, HatOperator) else float(y @ H @ y)
    return _elr_from_quadratic(q, M, sigma2)


def _elr_from_quadratic(q, M, sigma2):
    q = np.asarray(q, dtype=float)
    if np.any(q <= MIN_QUADRATIC):
        raise ValueError("y^T H y is numerically zero")
    out = M * np.log(M * sigma2) - M * np.log(q) + q / sigma2 - M
    return float(out) if out.ndim == 0 else out


def alr_statistic(y, H: HatOperator, M: int, sigma2: float) -> float:
    if M < 1:
        raise ValueError("M must be >= 1")
    q = H.quadratic(y) if isinstance(H, HatOperator) else float(y @ H @ y)
    return _alr_from_quadratic(q, M, sigma2)


def _alr_from_quadratic(q, M, sigma2):
    out = ((np.asarray(q, dtype=float) / sigma2 - M) / math.sqrt(2.0 * M)) ** 2
    return float(out) if out.ndim == 0 else out


def _f_from_quadratic(q, yy, M, n):
    return (np.asarray(q) / M) / ((np.asarray(yy) - np.asarray(q)) / (n - M))


def lr_statistic(y, H: HatOperator, sigma2: float) -> float:
    """2 (max l - l(0)) by Newton for any single hat (ridge included)."""
    pl = PrototypeLikelihood([H], y, sigma2)
    fit = fit_mle(pl)
    if not fit.converged:
        raise RuntimeError("univariate LR fit did not converge")
    return max(0.0, 2.0 * (fit.loglik_at_opt - loglik(pl, np.zeros(1))))


def hr_pvalue(observed: float, replicates, smoothed: bool = False) -> float:
    """Exceedance fraction #{R* > R} / B, or (1 + #{R* >= R}) / (B + 1)."""
    replicates = np.asarray(replicates)
    B = replicates.size
    if smoothed:
        return float((1 + np.count_nonzero(replicates >= observed)) / (B + 1))
    return float(np.count_nonzero(replicates > observed) / B)


def unsupervised_prototype(X, kind: str) -> np.ndarray:
    """Group centroid or first principal component (largest loading positive)."""
    X = np.asarray(X, dtype=float)
    if kind == "mean":
        return X.mean(axis=1)
    if kind == "pc":
        _, _, Vt = np.linalg.svd(X, full_matrices=False)
        v = Vt[0]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        return X @ v
    raise ValueError(f"unknown unsupervised prototype {kind!r}")


def t_test(y, x) -> tuple[float, float]:
    """Two-sided t-test of the slope of y on x, no intercept, df n - 1."""
    y = np.asarray(y, dtype=float)
    y = y - y.mean()
    n = y.shape[0]
    xx = float(x @ x)
    if xx <= 0:
        raise ValueError("prototype is identically zero")
    b = float(x @ y) / xx
    resid = y - b * x
    s2 = float(resid @ resid) / (n - 1)
    t = b / math.sqrt(s2 / xx)
    return t, float(2.0 * special.stdtr(n - 1, -abs(t)))


@dataclass
class LassoPrototype:
    """Selection outcome shared by the lasso-based tests."""

    selection: object
    event: object
    hat: HatOperator | None

    @property
    def M(self) -> int:
        return self.selection.size


def lasso_prototype(X, y, lam: float, beta0=None) -> LassoPrototype:
    sel = lasso_fixed_lambda(X, y, lam, beta0=beta0)
    if sel.size == 0:
        return LassoPrototype(sel, None, None)
    event = lasso_event(sel, X, lam)
    hat = make_hat(X[:, sel.active], "lasso_refit", columns=sel.active)
    return LassoPrototype(sel, event, hat)


def run_univariate_tests(methods, X, y, sigma2: float = 1.0, lam: float | None = None,
                         cfg: HitAndRunConfig | None = None, oracle_support=None,
                         smoothed: bool = False) -> dict:
    """Run several methods on one response, sharing the selection and the chain."""
    methods = list(methods)
    unknown = set(methods) - set(UNIVARIATE_METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    cfg = cfg or HitAndRunConfig()
    sigma = math.sqrt(sigma2)
    out = {}

    need_lasso = [m for m in methods if m in LASSO_METHODS]
    proto = None
    if need_lasso:
        if lam is None:
            raise ValueError("lasso-based methods need lambda")
        proto = lasso_prototype(X, y, lam)
        if proto.M == 0:
            for m in need_lasso:
                ref = f"sampled({cfg.n_samples},{cfg.burn_in},{cfg.seed})" if m in HR_METHODS else "analytic"
                out[m] = TestResult(math.nan, 1.0, m, ref, {"no-selection"},
                                    cfg.seed if m in HR_METHODS else None)
            need_lasso = []

    if need_lasso:
        M, H, event = proto.M, proto.hat, proto.event
        q = H.quadratic(y)
        yy = float(y @ y)
        stats = {
            "ELR": _elr_from_quadratic(q, M, sigma2),
            "ALR": _alr_from_quadratic(q, M, sigma2),
            "F": float(_f_from_quadratic(q, yy, M, n)),
        }
        extra = {"M": M, "active": proto.selection.active.tolist(), "lambda": lam}
        hr = [m for m in need_lasso if m in HR_METHODS]
        if hr:
            target = ConstrainedGaussian(np.zeros(n), event, scale=sigma)
            Y = hit_and_run(target, y, cfg)
            C = Y @ H.basis
            qs = (C * C) @ H.weights
            yys = np.einsum("ij,ij->i", Y, Y)
            ref = f"sampled({cfg.n_samples},{cfg.burn_in},{cfg.seed})"
            reps = {
                "ELR-HR": ("ELR", lambda: _elr_from_quadratic(qs, M, sigma2)),
                "ALR-HR": ("ALR", lambda: _alr_from_quadratic(qs, M, sigma2)),
                "F-HR": ("F", lambda: _f_from_quadratic(qs, yys, M, n)),
            }
            for m in hr:
                key, fn = reps[m]
                out[m] = TestResult(stats[key], hr_pvalue(stats[key], fn(), smoothed), m, ref,
                                    set(), cfg.seed, dict(extra))
        analytic = [m for m in need_lasso if m not in HR_METHODS]
        if analytic:
            bounds = tr.norm_bounds(event, H, y)
            for m in analytic:
                flags = set()
                if m == "ELR-Chi":
                    stat = stats["ELR"]
                    pval, flags = tr.elr_chi1_pvalue(stat, bounds, M, sigma2)
                elif m == "ALR-Exact":
                    stat = stats["ALR"]
                    pval, flags = tr.alr_exact_pvalue(stat, bounds, M, sigma2)
                else:
                    stat = stats["F"]
                    pval = tr.truncated_f_pvalue(stat, event, H, y, (M, n, p))
                out[m] = TestResult(stat, pval, m, "analytic", set(flags), None, dict(extra))

    for m in methods:
        if m in out:
            continue
        if m == "PT":
            i_star, event = marginal_screen_event(X, y)
            x = X[:, i_star] / np.linalg.norm(X[:, i_star])
            Z = float(x @ y) / sigma
            pval = tr.protolasso_pvalue(Z, event, x, y, sigma)
            flags = {"tie"} if event.meta.get("tie") else set()
            out[m] = TestResult(Z, pval, m, "analytic", flags, None, {"i_star": i_star})
        elif m in ("LR-all", "LR-or"):
            if m == "LR-all":
                cols = np.arange(p)
            else:
                if oracle_support is None or len(oracle_support) == 0:
                    raise ValueError("LR-or needs a non-empty oracle support")
                cols = np.asarray(oracle_support, dtype=int)
            H = make_hat(X[:, cols], "least_squares", columns=cols)
            stat = elr_statistic(y, H, H.rank, sigma2)
            pval = float(special.chdtrc(1, stat))
            out[m] = TestResult(stat, pval, m, "analytic", set(), None, {"M": H.rank})
        else:
            x = unsupervised_prototype(X, "mean" if m == "t-mean" else "pc")
            t, pval = t_test(y, x)
            out[m] = TestResult(t, pval, m, "analytic")
    for res in out.values():
        if not np.isfinite(res.statistic) and "no-selection" not in res.flags:
            raise RuntimeError(f"non-finite statistic for {res.method}")
    return {m: out[m] for m in methods}


def run_univariate_test(method: str, X, y, sigma2: float = 1.0, lam: float | None = None,
                        cfg: HitAndRunConfig | None = None, oracle_support=None,
                        smoothed: bool = False) -> TestResult:
    return run_univariate_tests([method], X, y, sigma2, lam, cfg, oracle_support, smoothed)[method]


def run_ridge_tests(X, y, sigma2: float = 1.0, ridge_lambda: float = 10.0) -> dict:
    """Non-selective pair on one group: classical F on the column span, and the
    exact LR of the ridge prototype against chi2_1."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    P = make_hat(X, "least_squares")
    M = P.rank
    if M >= n:
        raise ValueError("F test needs rank(X) < n")
    q = P.quadratic(y)
    F = float(_f_from_quadratic(q, float(y @ y), M, n))
    R = lr_statistic(y, make_hat(X, "ridge", ridge_lambda), sigma2)
    return {
        "F": TestResult(F, float(special.fdtrc(M, n - M, F)), "F", "analytic", set(), None,
                        {"df": (M, n - M)}),
        "LR": TestResult(R, float(special.chdtrc(1, R)), "LR", "analytic", set(), None,
                         {"ridge_lambda": ridge_lambda}),
    }
