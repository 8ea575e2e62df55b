import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize, stats

from conftest import unit_columns
from protosel.selection import (calibrate_lambda, lasso_cd, lasso_cd_batch, lasso_event,
                                lasso_fixed_lambda, marginal_screen_event, orthonormal_lambda)


def _objective(X, y, beta, lam):
    r = y - X @ beta
    return 0.5 * r @ r + lam * np.abs(beta).sum()


def test_large_lambda_selects_nothing(rng):
    X = unit_columns(rng, 30, 6)
    y = rng.standard_normal(30)
    lam = np.abs(X.T @ y).max()
    assert lasso_fixed_lambda(X, y, lam).size == 0
    ev = lasso_event(lasso_fixed_lambda(X, y, lam * 1.01), X)
    assert ev.contains(y)


def test_orthonormal_soft_threshold(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((20, 6)))
    y = 2 * rng.standard_normal(20)
    z = Q.T @ y
    lam = 1.0
    sel = lasso_fixed_lambda(Q, y, lam)
    np.testing.assert_allclose(sel.beta, np.sign(z) * np.maximum(np.abs(z) - lam, 0), atol=1e-10)
    np.testing.assert_array_equal(sel.active, np.flatnonzero(np.abs(z) > lam))


def test_orthonormal_event_reduces_to_boxes(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((20, 5)))
    lam = 0.8
    y = rng.standard_normal(20) * 1.5
    sel = lasso_fixed_lambda(Q, y, lam)
    ev = lasso_event(sel, Q)
    for _ in range(500):
        y2 = rng.standard_normal(20) * 1.5
        z = Q.T @ y2
        active = np.abs(z) > lam
        expect = (np.array_equal(np.flatnonzero(active), sel.active)
                  and np.array_equal(np.sign(z[active]), sel.signs))
        assert ev.contains(y2, tol=0) == expect


@given(st.integers(0, 10_000))
def test_objective_matches_generic_optimizer(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((20, 3))
    y = rng.standard_normal(20) + X @ [1.5, 0.0, -0.7]
    lam = 2.0
    sel = lasso_fixed_lambda(X, y, lam)
    # smooth split beta = u - v, u, v >= 0 solved by bounded quasi-Newton
    def f(w):
        b = w[:3] - w[3:]
        r = y - X @ b
        return 0.5 * r @ r + lam * w.sum(), np.concatenate([-X.T @ r + lam, X.T @ r + lam])

    res = optimize.minimize(f, np.zeros(6), jac=True, method="L-BFGS-B", bounds=[(0, None)] * 6,
                            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
    assert _objective(X, y, sel.beta, lam) <= res.fun + 1e-8


def test_kkt_conditions(rng):
    X = unit_columns(rng, 50, 20)
    y = X[:, :3] @ [3.0, -2.0, 1.0] + rng.standard_normal(50)
    lam = 0.7
    sel = lasso_fixed_lambda(X, y, lam)
    grad = X.T @ (y - X @ sel.beta)
    act = sel.active
    np.testing.assert_allclose(grad[act], lam * sel.signs, atol=1e-8)
    assert np.all(np.abs(np.delete(grad, act)) <= lam + 1e-8)


def test_batch_solver_matches_single(rng):
    X = unit_columns(rng, 40, 15)
    Y = rng.standard_normal((8, 40))
    B = lasso_cd_batch(X.T @ X, Y @ X, 0.6)
    for row, y in zip(B, Y):
        np.testing.assert_allclose(row, lasso_cd(X.T @ X, X.T @ y, 0.6), atol=1e-8)


def test_event_matches_refit(rng):
    X = unit_columns(rng, 40, 12)
    lam = 0.9
    y = X[:, :2] @ [2.0, 1.0] + rng.standard_normal(40)
    sel = lasso_fixed_lambda(X, y, lam)
    ev = lasso_event(sel, X)
    assert ev.contains(y)
    mismatches = 0
    hits = 0
    for _ in range(1000):
        # perturb around y so both outcomes are frequent
        y2 = y + 0.25 * rng.standard_normal(40)
        s2 = lasso_fixed_lambda(X, y2, lam)
        same = np.array_equal(s2.active, sel.active) and np.array_equal(s2.signs, sel.signs)
        slack = ev.slack(y2)
        if np.abs(slack).min() < 1e-7:
            continue  # boundary: either answer is right up to round-off
        hits += same
        mismatches += (slack.min() >= 0) != same
    assert mismatches == 0
    assert 50 < hits < 1000


def test_marginal_screen_single_column(rng):
    x = unit_columns(rng, 10, 1)
    y = rng.standard_normal(10)
    i, ev = marginal_screen_event(x, y)
    s = np.sign(x[:, 0] @ y)
    assert i == 0 and ev.n_constraints == 1
    np.testing.assert_allclose(ev.A[0], -s * x[:, 0])
    assert ev.b[0] == 0


def test_marginal_screen_exact_column():
    Q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((12, 5)))
    i, ev = marginal_screen_event(Q, Q[:, 3])
    assert i == 3
    assert np.all(ev.slack(Q[:, 3]) >= 0)
    assert ev.slack(Q[:, 3])[-1] > 0


def test_marginal_screen_matches_argmax(rng):
    X = unit_columns(rng, 15, 6)
    y = rng.standard_normal(15)
    i, ev = marginal_screen_event(X, y)
    sgn = np.sign(X[:, i] @ y)
    for _ in range(1000):
        y2 = rng.standard_normal(15)
        sc = X.T @ y2
        j = int(np.argmax(np.abs(sc)))
        assert ev.contains(y2, tol=0) == (j == i and np.sign(sc[j]) == sgn)


def test_calibration_self_consistent(rng):
    X = unit_columns(rng, 100, 50)
    lam, size, reached = calibrate_lambda(X, 10, 1.0, 100, rng)
    assert reached
    from protosel.selection import lasso_cd_batch as batch
    Y = rng.standard_normal((200, 100))
    fresh = np.count_nonzero(batch(X.T @ X, Y @ X, lam)) / 200
    assert abs(fresh - 10) <= 2


def test_calibration_orthonormal_oracle(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((200, 40)))
    lam, _, _ = calibrate_lambda(Q, 8, 1.0, 2000, rng)
    assert lam == pytest.approx(orthonormal_lambda(40, 8), rel=0.05)
    assert 2 * 40 * stats.norm.sf(orthonormal_lambda(40, 8)) == pytest.approx(8)


def test_calibration_full_target(rng):
    X = unit_columns(rng, 60, 8)
    lam, size, _ = calibrate_lambda(X, 8, 1.0, 50, rng)
    assert size >= 7


def test_invalid_inputs(rng):
    X = unit_columns(rng, 10, 3)
    with pytest.raises(ValueError):
        lasso_fixed_lambda(X, np.ones(10), 0.0)
    with pytest.raises(ValueError):
        calibrate_lambda(X, 5)
