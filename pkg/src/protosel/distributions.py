"""Tail-accurate CDFs for the normal, chi-square and F laws, plus truncated masses.

Everything goes through the regularized incomplete gamma / beta functions and
``log_ndtr`` so that interval probabilities deep in a tail are computed as
differences of survival functions in log space rather than of CDFs near one.
"""

from __future__ import annotations

import numpy as np
from scipy import special

NEG_INF = -np.inf


def _logdiffexp(la: float, lb: float) -> float:
    """log(exp(la) - exp(lb)) for la >= lb."""
    if lb == NEG_INF:
        return la
    if lb >= la:
        return NEG_INF
    return la + np.log1p(-np.exp(lb - la))


class _Law:
    """A continuous law on an interval with ``logcdf`` / ``logsf`` and a median."""

    median: float

    def logcdf(self, x):  # pragma: no cover - interface
        raise NotImplementedError

    def logsf(self, x):  # pragma: no cover - interface
        raise NotImplementedError

    def cdf(self, x):
        return np.exp(self.logcdf(x))

    def sf(self, x):
        return np.exp(self.logsf(x))

    def log_mass(self, lo: float, hi: float) -> float:
        """log P(lo < X < hi), taking the difference on the accurate side."""
        if hi <= lo:
            return NEG_INF
        if lo >= self.median:
            return _logdiffexp(self.logsf(lo), self.logsf(hi))
        if hi <= self.median:
            return _logdiffexp(self.logcdf(hi), self.logcdf(lo))
        return np.log1p(-np.exp(self.logcdf(lo)) - np.exp(self.logsf(hi)))

    def mass(self, lo: float, hi: float) -> float:
        return float(np.exp(self.log_mass(lo, hi)))


class Normal(_Law):
    median = 0.0

    def logcdf(self, x):
        return float(special.log_ndtr(x))

    def logsf(self, x):
        return float(special.log_ndtr(-x))


def _log_gamma_q_cf(a: float, x: float) -> float:
    """log Q(a, x) by the Lentz continued fraction; valid for x > a + 1."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return -x + a * np.log(x) - special.gammaln(a) + np.log(h)


class ChiSquare(_Law):
    def __init__(self, df: float):
        if df <= 0:
            raise ValueError("degrees of freedom must be positive")
        self.df = float(df)
        self.median = float(special.gammaincinv(self.df / 2, 0.5) * 2)

    def logcdf(self, x):
        if x <= 0:
            return NEG_INF
        if x == np.inf:
            return 0.0
        p = special.gammainc(self.df / 2, x / 2)
        if p > 0:
            return float(np.log(p))
        # lower tail: P(a, x) ~ x^a e^-x / Gamma(a + 1)
        a, h = self.df / 2, x / 2
        if h == 0:  # subnormal x
            return NEG_INF
        return float(a * np.log(h) - h - special.gammaln(a + 1) + np.log1p(h / (a + 1)))

    def logsf(self, x):
        if x <= 0:
            return 0.0
        if x == np.inf:
            return NEG_INF
        q = special.gammaincc(self.df / 2, x / 2)
        if q > 1e-280:
            return float(np.log(q))
        return float(_log_gamma_q_cf(self.df / 2, x / 2))


class FDist(_Law):
    def __init__(self, dfn: float, dfd: float):
        if dfn <= 0 or dfd <= 0:
            raise ValueError("degrees of freedom must be positive")
        self.dfn, self.dfd = float(dfn), float(dfd)
        self.median = float(special.fdtri(self.dfn, self.dfd, 0.5))

    def logcdf(self, x):
        if x <= 0:
            return NEG_INF
        if x == np.inf:
            return 0.0
        z = self.dfn * x / (self.dfn * x + self.dfd)
        return float(np.log(special.betainc(self.dfn / 2, self.dfd / 2, z)))

    def logsf(self, x):
        if x <= 0:
            return 0.0
        if x == np.inf:
            return NEG_INF
        z = self.dfd / (self.dfd + self.dfn * x)
        val = special.betainc(self.dfd / 2, self.dfn / 2, z)
        if val > 0:
            return float(np.log(val))
        # upper tail ~ z^(dfd/2) / (a B(a, b)) with a = dfd/2, b = dfn/2
        a, b = self.dfd / 2, self.dfn / 2
        return float(a * np.log(z) - np.log(a) - special.betaln(a, b))


def truncated_sf(law: _Law, x: float, lo: float, hi: float):
    """P(X > x | lo <= X <= hi) as ``(p, degenerate)``.

    ``degenerate`` flags a window whose mass underflows even in log space.
    """
    denom = law.log_mass(lo, hi)
    if not np.isfinite(denom):
        return 1.0, True
    num = law.log_mass(max(x, lo), hi)
    if not np.isfinite(num):
        return 0.0, False
    return float(min(1.0, max(0.0, np.exp(num - denom)))), False


def union_mass(law: _Law, intervals) -> float:
    """log of the total mass of disjoint intervals."""
    logs = [law.log_mass(lo, hi) for lo, hi in intervals]
    logs = [v for v in logs if np.isfinite(v)]
    if not logs:
        return NEG_INF
    return float(special.logsumexp(logs))
