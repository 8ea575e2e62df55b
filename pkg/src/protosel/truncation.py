"""Truncation windows implied by a selection event and the resulting p-values.

Each test conditions on everything but a scalar summary of y (a norm, a
coefficient, or an F ratio) so the event {A y <= b} becomes a window for that
scalar; the p-value is then a truncated-law tail probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import ChiSquare, FDist, Normal, truncated_sf, union_mass
from .linear_core import HatOperator
from .selection import SelectionEvent

DIR_TOL = 1e-12


@dataclass
class TruncationBounds:
    t_star: float
    T_star: float
    norm_obs: float
    q_star: float = 0.0
    Q_star: float = math.inf
    delta: np.ndarray | None = field(default=None, repr=False)
    direction: np.ndarray | None = field(default=None, repr=False)


@dataclass
class FTruncationRegion:
    intervals: list[tuple[float, float]]

    def contains(self, f: float, tol: float = 1e-8) -> bool:
        return any(lo - tol * max(1, lo) <= f
                   and (hi == math.inf or f <= hi + tol * max(1, hi))
                   for lo, hi in self.intervals)


def _ratio_bounds(Av, bt):
    """max over Av<0 and min over Av>0 of bt / Av."""
    neg = Av < -DIR_TOL
    pos = Av > DIR_TOL
    lo = float((bt[neg] / Av[neg]).max()) if neg.any() else -math.inf
    hi = float((bt[pos] / Av[pos]).min()) if pos.any() else math.inf
    return lo, hi


def norm_bounds(event: SelectionEvent, H: HatOperator, y) -> TruncationBounds:
    """Window for ||H y|| given A (I - H) y and the direction H y / ||H y||."""
    y = np.asarray(y, dtype=float)
    Hy = H.apply(y)
    norm = float(np.linalg.norm(Hy))
    if norm == 0:
        raise ValueError("H y is zero")
    v = Hy / norm
    delta = event.A @ (y - Hy)
    lo, hi = _ratio_bounds(event.A @ v, event.b - delta)
    lo = max(lo, 0.0)
    if norm < lo - 1e-6 * max(1, lo) or norm > hi + 1e-6 * max(1, norm):
        raise RuntimeError("inconsistent conditioning")
    return TruncationBounds(lo, hi, norm, delta=delta, direction=v)


def elr_of_norm(t: float, M: int, sigma2: float) -> float:
    """ELR statistic as a function of t = ||H y||."""
    if t <= 0:
        return math.inf
    if t == math.inf:
        return math.inf
    return M * math.log(M * sigma2) - 2 * M * math.log(t) + t * t / sigma2 - M


def elr_chi1_pvalue(R_obs: float, bounds: TruncationBounds, M: int, sigma2: float):
    """P(chi2_1 > R | q* <= chi2_1 <= Q*) as ``(p, flags)``."""
    rt, rT = elr_of_norm(bounds.t_star, M, sigma2), elr_of_norm(bounds.T_star, M, sigma2)
    Q = max(rt, rT)
    if bounds.t_star <= math.sqrt(M * sigma2) <= bounds.T_star:
        q = 0.0
    else:
        q = min(rt, rT)
    bounds.q_star, bounds.Q_star = q, Q
    if Q - q < 1e-12:
        return 1.0, {"degenerate-window"}
    p, degenerate = truncated_sf(ChiSquare(1), max(R_obs, q), q, Q)
    return p, ({"degenerate-window"} if degenerate else set())


def alr_exact_pvalue(r_obs: float, bounds: TruncationBounds, M: int, sigma2: float):
    """P(chi2_M outside M +- sqrt(2 M r) | (t*/s)^2 <= chi2_M <= (T*/s)^2)."""
    lo = (bounds.t_star**2) / sigma2
    hi = (bounds.T_star**2) / sigma2
    if hi - lo < 1e-12:
        return 1.0, {"degenerate-window"}
    law = ChiSquare(M)
    total = law.log_mass(lo, hi)
    if not np.isfinite(total):
        return 1.0, {"degenerate-window"}
    half = math.sqrt(2.0 * M * max(r_obs, 0.0))
    inside = law.log_mass(max(lo, M - half), min(hi, M + half))
    p = 1.0 - math.exp(inside - total) if np.isfinite(inside) else 1.0
    return min(1.0, max(0.0, p)), set()


def protolasso_window(event: SelectionEvent, x_istar, y, sigma: float = 1.0):
    """Window for Z = x_{i*}^T y / sigma given (I - x x^T) y."""
    x = np.asarray(x_istar, dtype=float)
    delta = y - x * (x @ y)
    lo, hi = _ratio_bounds(event.A @ x, event.b - event.A @ delta)
    if lo >= hi:
        raise RuntimeError("empty truncation")
    return lo / sigma, hi / sigma


def protolasso_pvalue(Z_obs: float, event: SelectionEvent, x_istar, y, sigma: float = 1.0) -> float:
    """1 - [Phi(min(|Z|, Z+)) - Phi(max(-|Z|, Z-))] / [Phi(Z+) - Phi(Z-)]."""
    zlo, zhi = protolasso_window(event, x_istar, y, sigma)
    law = Normal()
    denom = law.log_mass(zlo, zhi)
    if not np.isfinite(denom):
        return 1.0
    a = abs(Z_obs)
    inner = law.log_mass(max(-a, zlo), min(a, zhi))
    p = 1.0 - math.exp(inner - denom) if np.isfinite(inner) else 1.0
    return min(1.0, max(0.0, p))


def _row_angles(q: float, s: float, b: float):
    """Angles phi in [0, pi/2] with q sin(phi) + s cos(phi) <= b, as intervals."""
    R = math.hypot(q, s)
    if R <= DIR_TOL * max(1.0, abs(b)):
        return [(0.0, math.pi / 2)] if b >= 0 else []
    if b >= R:
        return [(0.0, math.pi / 2)]
    if b < -R:
        return []
    # R sin(phi + psi) <= b with psi = atan2(s, q); bad set is an arc of x = phi + psi
    psi = math.atan2(s, q)
    a = math.asin(b / R)
    bad = []
    for k in range(-2, 3):
        lo, hi = a + 2 * math.pi * k - psi, math.pi - a + 2 * math.pi * k - psi
        bad.append((lo, hi))
    good = [(0.0, math.pi / 2)]
    for blo, bhi in bad:
        nxt = []
        for glo, ghi in good:
            if bhi <= glo or blo >= ghi:
                nxt.append((glo, ghi))
                continue
            if blo > glo:
                nxt.append((glo, blo))
            if bhi < ghi:
                nxt.append((bhi, ghi))
        good = nxt
    return good


def _intersect(a, b):
    out = []
    for lo1, hi1 in a:
        for lo2, hi2 in b:
            lo, hi = max(lo1, lo2), min(hi1, hi2)
            if lo < hi:
                out.append((lo, hi))
    return sorted(out)


def f_region(event: SelectionEvent, H: HatOperator, y, M: int, n: int):
    """Region of f > 0 with q_j sqrt(c f) + r_j sqrt(1 + c f) + s_j <= 0 for all rows.

    Returns ``(region, F_obs, c)`` with ``c = M / (n - M)``.
    """
    y = np.asarray(y, dtype=float)
    Hy = H.apply(y)
    Ry = y - Hy
    nN, nD = np.linalg.norm(Hy), np.linalg.norm(Ry)
    if nN == 0 or nD == 0:
        raise ValueError("degenerate decomposition of y")
    l = float(np.linalg.norm(y))
    c = M / (n - M)
    qv = l * (event.A @ (Hy / nN))
    sv = l * (event.A @ (Ry / nD))
    # dividing by sqrt(1 + c f): q sin(phi) + s cos(phi) <= b with tan^2(phi) = c f
    angles = [(0.0, math.pi / 2)]
    for qj, sj, bj in zip(qv, sv, event.b):
        angles = _intersect(angles, _row_angles(qj, sj, bj))
        if not angles:
            break
    region = FTruncationRegion([(math.tan(lo) ** 2 / c, _tan2(hi) / c) for lo, hi in angles])
    F_obs = (nN**2 / M) / (nD**2 / (n - M))
    if not region.contains(F_obs, 1e-6):
        raise RuntimeError("inconsistent region")
    return region, F_obs, c


def _tan2(phi: float) -> float:
    return math.inf if phi >= math.pi / 2 - 1e-15 else math.tan(phi) ** 2


def truncated_f_pvalue(F_obs: float, event: SelectionEvent, H: HatOperator, y, dims) -> float:
    """P(F_{M, n-M} > F_obs | F in region) using the region built from y."""
    M, n = dims[0], dims[1]
    region, _, _ = f_region(event, H, y, M, n)
    law = FDist(M, n - M)
    denom = union_mass(law, region.intervals)
    if not np.isfinite(denom):
        return 1.0
    upper = [(max(lo, F_obs), hi) for lo, hi in region.intervals if hi > F_obs]
    num = union_mass(law, upper)
    if not np.isfinite(num):
        return 0.0
    return float(min(1.0, max(0.0, math.exp(num - denom))))
