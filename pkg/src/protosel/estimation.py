"""Prediction with the prototype model: penalized fits and the comparison estimators.

The maximum-likelihood fit minimizes ||y - mu 1 - Yhat theta||^2 / (2 sigma^2)
- log|G(theta)|; the log-determinant acts as a convex penalty on theta.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LassoCV
from sklearn.model_selection import KFold

from .datagen import generate_design, group_partition, prototype_response
from .likelihood import FitResult, PrototypeLikelihood, fit_mle
from .linear_core import GroupedDesign, GTheta, make_hat

log = logging.getLogger(__name__)

ESTIMATORS = ("LPML-M", "LPML-L", "LSL", "LSL-O", "OPML", "SOPML-M", "SOPML-L")
ORACLE_SUPPORT = {"LSL-O", "OPML", "SOPML-M", "SOPML-L"}
ORACLE_PARAMS = {"SOPML-M", "SOPML-L"}
SPARSITY = {"equal": (3, 3, 3, 3), "unequal": (10, 5, 5, 3)}
THETAS = {
    "zero": (0.0, 0.0, 0.0, 0.0),
    "small": (0.2, 0.2, 0.2, 0.2),
    "large": (0.4, 0.4, 0.4, 0.4),
    "increasing": (0.0, 0.0, 0.2, 0.5),
    "decreasing": (0.5, 0.2, 0.0, 0.0),
}


@dataclass(frozen=True)
class EstimatorKind:
    tag: str
    supports: tuple | None = None  # true S_k, as column indices of X
    theta: tuple | None = None
    mu: float | None = None

    def __post_init__(self):
        if self.tag not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.tag!r}")
        if self.tag in ORACLE_SUPPORT and self.supports is None:
            raise ValueError(f"{self.tag} needs the true supports")
        if self.tag in ORACLE_PARAMS and (self.theta is None or self.mu is None):
            raise ValueError(f"{self.tag} needs the true theta and mu")


def fit_prototype_penalized(design: GroupedDesign | None, y, hats, sigma2: float = 1.0,
                            with_intercept: bool = True) -> FitResult:
    """Prototype-penalized least squares, i.e. the maximum-likelihood fit."""
    pl = PrototypeLikelihood(hats, y, sigma2, intercept_enabled=with_intercept, design=design)
    return fit_mle(pl)


CV_PATH_RATIO = 1e-2  # smallest/largest penalty on the CV path


def cv_lasso_support(X, y, folds: int = 10, seed=0) -> np.ndarray:
    """Support of the lasso (with intercept) at the CV-minimizing penalty."""
    cv = KFold(folds, shuffle=True, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model = LassoCV(cv=cv, eps=CV_PATH_RATIO, precompute=True, fit_intercept=True,
                        max_iter=10_000).fit(X, y)
    return np.flatnonzero(model.coef_)


def _ls_with_intercept(X_sub, y):
    y_bar = y.mean()
    if X_sub.shape[1] == 0:
        return np.full_like(y, y_bar)
    coef, *_ = np.linalg.lstsq(X_sub, y - y_bar, rcond=None)
    return y_bar + X_sub @ coef


def mean_prediction(theta, mu: float, hats) -> np.ndarray:
    """mu G(theta)^-1 1."""
    G = GTheta(np.asarray(theta, dtype=float), list(hats)).dense()
    return mu * np.linalg.solve(G, np.ones(G.shape[0]))


def linear_prediction(theta, mu: float, hats, y_train) -> np.ndarray:
    """mu 1 + sum_k theta_k H_k y_train."""
    pred = np.full(y_train.shape[0], float(mu))
    for t, h in zip(theta, hats):
        pred += t * h.apply(y_train)
    return pred


@dataclass
class PrototypeFit:
    """Hats and fitted parameters; predictions are recomputed from these alone."""

    hats: list
    theta: np.ndarray
    mu: float
    fit: FitResult | None = None
    supports: list = field(default_factory=list)


def _prototype_fit(design, y, supports, sigma2):
    pairs = [(S, make_hat(design.X[:, S], "least_squares")) for S in supports if len(S)]
    if not pairs:
        return PrototypeFit([], np.zeros(0), float(y.mean()), None, [])
    hats = [h for _, h in pairs]
    fit = fit_prototype_penalized(design, y, hats, sigma2, with_intercept=True)
    if not fit.converged:
        log.warning("prototype fit did not converge (gradient %.2e)", fit.gradient_norm_final)
    return PrototypeFit(hats, fit.theta_hat, fit.mu_hat, fit, [S for S, _ in pairs])


def predict(kind: EstimatorKind, design: GroupedDesign, y_train, sigma2: float = 1.0,
            folds: int = 10, seed=0, cache: dict | None = None) -> np.ndarray:
    """Length-n prediction of a new response from ``y_train`` by the given estimator.

    ``cache`` shares the per-group CV-lasso fit between LPML-M and LPML-L.
    """
    y = np.asarray(y_train, dtype=float)
    cache = {} if cache is None else cache
    tag = kind.tag
    if tag in ("LPML-M", "LPML-L"):
        if "lpml" not in cache:
            supports = []
            for k, g in enumerate(design.groups):
                sel = cv_lasso_support(design.X[:, g], y, folds, seed + k)
                supports.append(np.asarray(g)[sel])
            cache["lpml"] = _prototype_fit(design, y, supports, sigma2)
        pf = cache["lpml"]
        if not pf.hats:
            return np.full_like(y, pf.mu)
        if tag == "LPML-M":
            return mean_prediction(pf.theta, pf.mu, pf.hats)
        return linear_prediction(pf.theta, pf.mu, pf.hats, y)
    if tag == "LSL":
        S = cv_lasso_support(design.X, y, folds, seed + len(design.groups))
        return _ls_with_intercept(design.X[:, S], y)
    supports = [np.asarray(S, dtype=int) for S in kind.supports]
    if tag == "LSL-O":
        S = np.concatenate(supports) if supports else np.zeros(0, dtype=int)
        return _ls_with_intercept(design.X[:, S], y)
    if tag == "OPML":
        if "opml" not in cache:
            cache["opml"] = _prototype_fit(design, y, supports, sigma2)
        pf = cache["opml"]
        return linear_prediction(pf.theta, pf.mu, pf.hats, y) if pf.hats else np.full_like(y, pf.mu)
    hats = [make_hat(design.X[:, S], "least_squares") for S in supports]
    if tag == "SOPML-M":
        return mean_prediction(kind.theta, kind.mu, hats)
    return linear_prediction(kind.theta, kind.mu, hats, y)


@dataclass
class EstimationConfig:
    n: int = 100
    group_size: int = 25
    sigma2: float = 1.0
    replications: int = 120
    sparsity: tuple = ("equal", "unequal")
    thetas: tuple = ("zero", "small", "large", "increasing", "decreasing")
    mus: tuple = (0.0, 2.0)
    rhos: tuple = (0.0, 0.3)
    estimators: tuple = ESTIMATORS
    folds: int = 10
    seed: int = 0


def true_supports(group_size: int, counts) -> list[np.ndarray]:
    """First ``counts[k]`` columns of each consecutive group."""
    return [np.arange(k * group_size, k * group_size + c) for k, c in enumerate(counts)]


def run_estimation_cell(design, supports, theta, mu, cfg: EstimationConfig, seed) -> dict:
    """Test MSE per estimator for each replication of one parameter cell."""
    hats = [make_hat(design.X[:, S], "least_squares") for S in supports]
    rng = np.random.default_rng(seed)
    mse = {tag: np.empty(cfg.replications) for tag in cfg.estimators}
    kinds = {tag: EstimatorKind(tag, tuple(map(tuple, supports)), tuple(theta), mu)
             for tag in cfg.estimators}
    for b in range(cfg.replications):
        pair = prototype_response(hats, theta, mu, cfg.sigma2, rng, size=2)
        y_train, y_test = pair[0], pair[1]
        cache = {}
        fold_seed = int(rng.integers(2**31))
        for tag, kind in kinds.items():
            pred = predict(kind, design, y_train, cfg.sigma2, cfg.folds, fold_seed, cache)
            mse[tag][b] = float(np.mean((y_test - pred) ** 2))
    return mse


def run_estimation_experiment(cfg: EstimationConfig) -> list[dict]:
    """Test-MSE ratios against LPML-M over the configured grid; one row per cell and estimator."""
    rows = []
    root = np.random.SeedSequence(cfg.seed)
    designs = {}
    for rho, child in zip(cfg.rhos, root.spawn(len(cfg.rhos))):
        designs[rho] = generate_design(cfg.n, 4 * cfg.group_size, [cfg.group_size] * 4, rho,
                                       np.random.default_rng(child))
    cells = [(sp, th, mu, rho) for sp in cfg.sparsity for th in cfg.thetas
             for mu in cfg.mus for rho in cfg.rhos]
    for (sp, th, mu, rho), child in zip(cells, root.spawn(len(cells))):
        supports = true_supports(cfg.group_size, SPARSITY[sp])
        theta = np.asarray(THETAS[th], dtype=float)
        mse = run_estimation_cell(designs[rho], supports, theta, mu, cfg, child)
        ref = mse.get("LPML-M")
        for tag, values in mse.items():
            ratio = values / ref if ref is not None else np.full_like(values, np.nan)
            rows.append({
                "sparsity": sp, "theta": th, "mu": mu, "rho": rho, "estimator": tag,
                "mean_mse": float(values.mean()), "mean_ratio": float(ratio.mean()),
                "median_ratio": float(np.median(ratio)),
                "q25_ratio": float(np.quantile(ratio, 0.25)),
                "q75_ratio": float(np.quantile(ratio, 0.75)),
                "replications": int(values.size),
            })
    return rows


__all__ = ["EstimatorKind", "EstimationConfig", "fit_prototype_penalized", "predict",
           "run_estimation_experiment", "run_estimation_cell", "true_supports",
           "mean_prediction", "linear_prediction", "group_partition"]
