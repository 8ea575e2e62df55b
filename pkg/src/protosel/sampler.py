"""Hit-and-run sampling of a Gaussian restricted to a polytope {y : A y <= b}."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtri, ndtri_exp

from .selection import SelectionEvent

DIRECTION_TOL = 1e-12
# "forward": burn in from the start point, then keep every thinning-th state.
# "exchangeable": the start point sits at a uniform position of the kept path
# (two independent runs from it; the kernel is reversible), so the observed
# state is exchangeable with the samples and burn-in is not used.
CHAIN_SCHEMES = ("forward", "exchangeable")
_SQRT1_2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class HitAndRunConfig:
    n_samples: int = 50_000
    burn_in: int = 10_000
    seed: int = 0
    thinning: int = 1
    scheme: str = "exchangeable"

    def __post_init__(self):
        if self.scheme not in CHAIN_SCHEMES:
            raise ValueError(f"unknown chain scheme {self.scheme!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")


@dataclass(frozen=True, eq=False)
class ConstrainedGaussian:
    """N(mean, cov) restricted to ``event``; ``cov_sqrt`` None means identity.

    ``scale`` is a shortcut for ``cov_sqrt = scale * I``.
    """

    mean: np.ndarray
    event: SelectionEvent
    cov_sqrt: np.ndarray | None = None
    scale: float = 1.0

    def whiten(self, y):
        z = y - self.mean
        if self.cov_sqrt is not None:
            return np.linalg.solve(self.cov_sqrt, z)
        return z / self.scale

    def unwhiten(self, z):
        if self.cov_sqrt is not None:
            return z @ self.cov_sqrt.T + self.mean
        return self.scale * z + self.mean

    def whitened_constraints(self):
        A, b = self.event.A, self.event.b
        # y = S z + mu  =>  A S z <= b - A mu
        A_t = A @ self.cov_sqrt if self.cov_sqrt is not None else self.scale * A
        return A_t, b - A @ self.mean


def chord_interval(A, b, y, z):
    """Range of kappa with A (y + (kappa - z^T y) z) <= b."""
    A = np.atleast_2d(A)
    zy = float(z @ y)
    if A.shape[0] == 0:
        return -np.inf, np.inf
    az = A @ z
    slack = b - A @ y
    return _interval(slack, az, zy)


def _interval(slack, az, zy):
    pos = az > DIRECTION_TOL
    neg = az < -DIRECTION_TOL
    hi = zy + (slack[pos] / az[pos]).min() if pos.any() else np.inf
    lo = zy + (slack[neg] / az[neg]).max() if neg.any() else -np.inf
    if lo > hi:
        if lo - hi < 1e-9 * max(1.0, abs(lo)):
            mid = 0.5 * (lo + hi)
            return mid, mid
        raise RuntimeError("infeasible chord")
    return lo, hi


def truncated_std_normal(lo: float, hi: float, rng) -> float:
    if not lo < hi:
        raise ValueError("empty truncation interval")
    return _truncnorm_from_uniform(lo, hi, rng.random())


def _truncnorm_from_uniform(lo: float, hi: float, u: float) -> float:
    """Inverse-CDF draw from N(0, 1) on [lo, hi]; tails handled in log space."""
    u = min(max(u, 1e-300), 1.0 - 1e-16)
    if lo >= hi:
        return lo
    if lo >= 0.0:
        return -_upper_tail_draw(-hi, -lo, u)
    if hi <= 0.0:
        return _upper_tail_draw(lo, hi, u)
    plo = 0.5 * math.erfc(-lo * _SQRT1_2)
    phi = 0.5 * math.erfc(-hi * _SQRT1_2)
    x = float(ndtri(plo + u * (phi - plo)))
    return min(max(x, lo), hi)


def _upper_tail_draw(lo: float, hi: float, u: float) -> float:
    """Draw on [lo, hi] with hi <= 0 working with log-CDF values."""
    if hi > -4.0:
        plo = 0.5 * math.erfc(-lo * _SQRT1_2)
        phi = 0.5 * math.erfc(-hi * _SQRT1_2)
        x = float(ndtri(plo + u * (phi - plo)))
    else:
        lphi = float(log_ndtr(hi))
        llo = float(log_ndtr(lo)) if lo > -np.inf else -np.inf
        # log(Phi(lo) + u (Phi(hi) - Phi(lo)))
        r = math.exp(llo - lphi) if llo > -np.inf else 0.0
        target = lphi + math.log(r + u * (1.0 - r))
        x = float(ndtri_exp(target))
    return min(max(x, lo), hi)


def hit_and_run(target: ConstrainedGaussian, start, cfg: HitAndRunConfig,
                chunk: int = 2048) -> np.ndarray:
    """Return ``cfg.n_samples`` draws (rows) of the constrained Gaussian."""
    A_t, b_t = target.whitened_constraints()
    y0 = np.asarray(start, dtype=float)
    if not np.all(target.event.b - target.event.A @ y0 >= -1e-8):
        raise ValueError("start point violates the constraints")
    rng = np.random.default_rng(cfg.seed)
    z0 = target.whiten(y0)
    if cfg.scheme == "forward":
        Z = run_chain(A_t, b_t, z0, cfg.n_samples, cfg.burn_in, cfg.thinning, rng, chunk)
    else:
        back = int(rng.integers(0, cfg.n_samples + 1))
        Z = np.vstack([
            run_chain(A_t, b_t, z0, back, 0, cfg.thinning, rng, chunk)[::-1],
            run_chain(A_t, b_t, z0, cfg.n_samples - back, 0, cfg.thinning, rng, chunk),
        ])
    Y = target.unwhiten(Z)
    if A_t.shape[0]:
        worst = (Y @ target.event.A.T - target.event.b).max()
        if worst > 1e-8 * max(1.0, np.abs(target.event.b).max()):
            raise RuntimeError(f"sampled point violates constraints by {worst:.3g}")
    return Y


def run_chain(A, b, z0, n_samples, burn_in, thinning, rng, chunk=2048):
    """Hit-and-run for N(0, I) restricted to {z : A z <= b}, starting at z0."""
    n = z0.shape[0]
    q = A.shape[0]
    z = z0.copy()
    out = np.empty((n_samples, n))
    total = burn_in + n_samples * thinning
    kept = 0
    step = 0
    Az = A @ z if q else np.zeros(0)
    while step < total:
        m = min(chunk, total - step)
        D = rng.standard_normal((m, n))
        D /= np.linalg.norm(D, axis=1, keepdims=True)
        U = rng.random(m)
        if q:
            AD = D @ A.T
            slack = np.maximum(b - Az, 0.0)
            with np.errstate(divide="ignore"):
                inv = 1.0 / AD
            pos = AD > DIRECTION_TOL
            neg = AD < -DIRECTION_TOL
        for i in range(m):
            d = D[i]
            dz = float(d @ z)
            if q:
                ratios = slack * inv[i]
                hi = dz + ratios.min(where=pos[i], initial=np.inf)
                lo = dz + ratios.max(where=neg[i], initial=-np.inf)
                if lo > hi:
                    lo = hi = 0.5 * (lo + hi)
            else:
                lo, hi = -np.inf, np.inf
            kappa = _truncnorm_from_uniform(lo, hi, U[i])
            t = kappa - dz
            z += t * d
            if q:
                slack -= t * AD[i]
                np.maximum(slack, 0.0, out=slack)
            step += 1
            if step > burn_in and (step - burn_in) % thinning == 0:
                out[kept] = z
                kept += 1
        if q:
            # refresh against drift
            Az = A @ z
    return out
