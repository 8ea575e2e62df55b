import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from conftest import unit_columns
from protosel import truncation as tr
from protosel.linear_core import make_hat
from protosel.selection import (SelectionEvent, empty_event, lasso_event, lasso_fixed_lambda,
                                marginal_screen_event)

MC = 1_000_000


def _lasso_case(seed, n=40, m=10, lam=0.8):
    rng = np.random.default_rng(seed)
    X = unit_columns(rng, n, m)
    y = X[:, :2] @ [1.5, -1.0] + rng.standard_normal(n)
    sel = lasso_fixed_lambda(X, y, lam)
    return X, y, sel, lasso_event(sel, X), make_hat(X[:, sel.active])


def test_norm_bounds_unconstrained(rng):
    H = make_hat(rng.standard_normal((10, 2)))
    b = tr.norm_bounds(empty_event(10), H, rng.standard_normal(10))
    assert b.t_star == 0.0 and b.T_star == math.inf


def test_norm_bounds_single_active_row():
    H = make_hat(np.array([1.0, 0, 0]))
    y = np.array([2.0, 1.0, 0.0])
    ev = SelectionEvent(np.array([[1.0, 0, 0]]), np.array([5.0]))
    b = tr.norm_bounds(ev, H, y)
    assert b.T_star == pytest.approx(5.0) and b.t_star == 0.0


def test_norm_bounds_line_scan():
    X, y, sel, ev, H = _lasso_case(1)
    b = tr.norm_bounds(ev, H, y)
    Hy = H.apply(y)
    v = Hy / np.linalg.norm(Hy)
    r = y - Hy
    top = min(b.T_star, 50.0) * 1.2 + 1
    for t in np.linspace(0.0, top, 400)[1:]:
        y_t = t * v + r
        if min(abs(t - b.t_star), abs(t - b.T_star)) < 1e-6:
            continue
        s = lasso_fixed_lambda(X, y_t, sel.lam)
        same = np.array_equal(s.active, sel.active) and np.array_equal(s.signs, sel.signs)
        assert same == (b.t_star <= t <= b.T_star)


def test_elr_plain_survival_without_truncation():
    bounds = tr.TruncationBounds(0.0, math.inf, 2.0)
    p, flags = tr.elr_chi1_pvalue(2.7, bounds, 3, 1.0)
    assert p == pytest.approx(special.chdtrc(1, 2.7), rel=1e-10)
    assert not flags


def test_elr_left_edge_gives_one():
    bounds = tr.TruncationBounds(3.0, 5.0, 3.5)
    tr.elr_chi1_pvalue(0.0, bounds, 2, 1.0)
    p, _ = tr.elr_chi1_pvalue(bounds.q_star, bounds, 2, 1.0)
    assert p == pytest.approx(1.0)


def test_elr_of_norm_matches_statistic(rng):
    from protosel.univariate import elr_statistic
    H = make_hat(rng.standard_normal((20, 4)))
    y = rng.standard_normal(20) * 1.4
    t = np.linalg.norm(H.apply(y))
    assert tr.elr_of_norm(t, 4, 1.3) == pytest.approx(elr_statistic(y, H, 4, 1.3), rel=1e-12)


def _mc_se(p):
    return 3 * math.sqrt(max(p * (1 - p), 1e-12) / MC) + 1e-4


def test_elr_truncated_vs_rejection(rng):
    bounds = tr.TruncationBounds(2.6, 4.1, 3.0)
    M, s2 = 4, 1.0
    R = tr.elr_of_norm(3.0, M, s2)
    p, _ = tr.elr_chi1_pvalue(R, bounds, M, s2)
    draws = rng.chisquare(1, MC * 4)
    keep = draws[(draws >= bounds.q_star) & (draws <= bounds.Q_star)][:MC]
    assert keep.size > MC // 10
    ref = np.mean(keep > R)
    assert abs(p - ref) < 3 * math.sqrt(ref * (1 - ref) / keep.size) + 1e-4


def test_alr_zero_gives_one():
    p, _ = tr.alr_exact_pvalue(0.0, tr.TruncationBounds(1.0, 6.0, 3.0), 5, 1.0)
    assert p == pytest.approx(1.0)


def test_alr_untruncated_quadrature():
    r = 1.3
    half = math.sqrt(20 * r)
    p, _ = tr.alr_exact_pvalue(r, tr.TruncationBounds(0.0, math.inf, 3.0), 10, 1.0)
    inside, _ = integrate.quad(stats.chi2(10).pdf, 10 - half, 10 + half, epsabs=1e-13)
    assert p == pytest.approx(1 - inside, abs=1e-9)
    assert p == pytest.approx(stats.chi2.sf(10 + half, 10) + stats.chi2.cdf(10 - half, 10), abs=1e-12)


def test_alr_truncated_vs_rejection(rng):
    M, s2 = 6, 1.5
    bounds = tr.TruncationBounds(2.0, 3.6, 3.0)
    r = 0.4
    p, _ = tr.alr_exact_pvalue(r, bounds, M, s2)
    lo, hi = bounds.t_star**2 / s2, bounds.T_star**2 / s2
    draws = rng.chisquare(M, 2 * MC)
    keep = draws[(draws >= lo) & (draws <= hi)]
    ref = np.mean(np.abs(keep - M) > math.sqrt(2 * M * r))
    assert abs(p - ref) < 3 * math.sqrt(ref * (1 - ref) / keep.size) + 1e-4


def test_protolasso_single_predictor(rng):
    x = unit_columns(rng, 20, 1)
    y = x[:, 0] * 1.7 + rng.standard_normal(20) * 0.1
    i, ev = marginal_screen_event(x, y)
    sgn = np.sign(x[:, 0] @ y)
    xs = x[:, 0]
    lo, hi = tr.protolasso_window(ev, xs, y)
    Z = float(xs @ y)
    if sgn > 0:
        assert lo == pytest.approx(0.0, abs=1e-12) and hi == math.inf
        p = tr.protolasso_pvalue(Z, ev, xs, y)
        ref = stats.norm.sf(Z) / stats.norm.sf(0)
        assert p == pytest.approx(ref, rel=1e-9)


def test_protolasso_window_edge_gives_one(rng):
    X = unit_columns(rng, 30, 5)
    y = rng.standard_normal(30)
    i, ev = marginal_screen_event(X, y)
    x = X[:, i]
    lo, hi = tr.protolasso_window(ev, x, y)
    edge = lo if abs(lo) < abs(hi) else hi
    assert tr.protolasso_pvalue(edge, ev, x, y) == pytest.approx(1.0)


def test_protolasso_null_uniform():
    rng = np.random.default_rng(5)
    X = unit_columns(rng, 40, 5)
    ps = []
    for _ in range(2000):
        y = rng.standard_normal(40)
        i, ev = marginal_screen_event(X, y)
        x = X[:, i]
        ps.append(tr.protolasso_pvalue(float(x @ y), ev, x, y))
    assert stats.kstest(ps, "uniform").statistic < 0.035


def test_truncated_f_unconstrained(rng):
    H = make_hat(rng.standard_normal((25, 3)))
    y = rng.standard_normal(25)
    region, F, c = tr.f_region(empty_event(25), H, y, 3, 25)
    assert region.intervals == [(0.0, math.inf)]
    p = tr.truncated_f_pvalue(F, empty_event(25), H, y, (3, 25, 3))
    assert p == pytest.approx(special.fdtrc(3, 22, F), rel=1e-9)


def test_row_angle_boundary_closed_form():
    q, r, c = 2.0, -1.2, 0.25
    # q sqrt(c f) + r sqrt(1 + c f) <= 0 becomes q sin(phi) <= -r
    (lo, hi), = tr._row_angles(q, 0.0, -r)
    f = math.tan(hi) ** 2 / c
    assert lo == 0.0
    assert f == pytest.approx(r * r / (c * (q * q - r * r)), rel=1e-12)
    assert q * math.sqrt(c * f) + r * math.sqrt(1 + c * f) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_f_region_grid(seed):
    X, y, sel, ev, H = _lasso_case(seed, lam=0.6)
    n, M = 40, sel.size
    region, F, c = tr.f_region(ev, H, y, M, n)
    Hy = H.apply(y)
    u, w = Hy / np.linalg.norm(Hy), (y - Hy) / np.linalg.norm(y - Hy)
    l = np.linalg.norm(y)
    for f in np.concatenate([np.linspace(1e-4, 3 * F + 5, 800), [F]]):
        phi = math.atan(math.sqrt(c * f))
        y_f = l * (math.sin(phi) * u + math.cos(phi) * w)
        slack = ev.slack(y_f)
        if np.abs(slack).min() < 1e-7:
            continue
        assert region.contains(f, 0) == bool(slack.min() >= 0)


def test_f_pvalue_bounds_and_monotone(rng):
    X, y, sel, ev, H = _lasso_case(2)
    p = tr.truncated_f_pvalue(1.0, ev, H, y, (sel.size, 40, 10))
    assert 0.0 <= p <= 1.0
    region, F, _ = tr.f_region(ev, H, y, sel.size, 40)
    ps = [tr.truncated_f_pvalue(f, ev, H, y, (sel.size, 40, 10))
          for f in np.linspace(region.intervals[0][0], F * 2, 20)]
    assert all(a >= b - 1e-12 for a, b in zip(ps, ps[1:]))
