import csv
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from lasso_oracle import duality_gap, fista_path, objective, standardize
from tapkrig.lasso import (
    LassoPath, cross_validate, fold_ids, kkt_violation, lambda_grid, lasso_path, one_se_rule,
    select_by_variance_target,
)


def instance(rng, n, p, k=3, noise=0.5, sparse=False):
    X = rng.normal(size=(n, p))
    if sparse:
        X *= rng.uniform(size=(n, p)) < 0.3
    beta = np.zeros(p)
    beta[rng.choice(p, min(k, p), replace=False)] = rng.normal(0, 2, min(k, p))
    return X, X @ beta + noise * rng.normal(size=n)


def test_lambda_max_gives_zero():
    rng = np.random.default_rng(0)
    X, y = instance(rng, 50, 8)
    path = lasso_path(X, y, n_lambdas=10)
    assert np.all(path.std_coefs[0] == 0)
    Xs, yc = standardize(X, y)
    assert_allclose(path.lambdas[0], np.abs(Xs.T @ yc).max() / 50, rtol=1e-12)
    big = lasso_path(X, y, lambdas=[2 * path.lambdas[0]])
    assert np.all(big.coefs == 0)
    assert_allclose(big.intercepts, y.mean())


def test_single_column_soft_threshold():
    rng = np.random.default_rng(1)
    x = rng.normal(size=40)
    x = (x - x.mean()) / np.sqrt(np.mean((x - x.mean()) ** 2))
    y = 0.7 * x + rng.normal(size=40)
    lams = np.array([1.0, 0.5, 0.3, 0.1, 0.0])
    path = lasso_path(x[:, None], y, lambdas=lams)
    z = x @ (y - y.mean()) / 40
    ref = np.sign(z) * np.maximum(np.abs(z) - lams, 0)
    assert_allclose(path.coefs[:, 0], ref, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("n,p", [(10, 5), (30, 10), (80, 20), (200, 50)])
def test_objective_matches_oracle(n, p):
    rng = np.random.default_rng(n + p)
    X, y = instance(rng, n, p)
    path = lasso_path(X, y, n_lambdas=30)
    Xs, yc, ref = fista_path(X, y, path.lambdas)
    for lam, b, bo in zip(path.lambdas, path.std_coefs, ref):
        assert duality_gap(Xs, yc, lam, bo) < 1e-12
        assert abs(objective(Xs, yc, lam, b) - objective(Xs, yc, lam, bo)) <= 1e-8
    assert kkt_violation(X, y, path) <= 1e-6


def test_coefficients_on_original_scale():
    rng = np.random.default_rng(2)
    X, y = instance(rng, 60, 6)
    X = 3.0 * X + 5.0
    path = lasso_path(X, y, n_lambdas=20)
    Xs, yc = standardize(X, y)
    for k in range(20):
        assert_allclose(path.intercepts[k] + X @ path.coefs[k], y.mean() + Xs @ path.std_coefs[k],
                        rtol=1e-10, atol=1e-10)


def test_sparse_and_dense_inputs_agree():
    rng = np.random.default_rng(3)
    X, y = instance(rng, 120, 15, sparse=True)
    a = lasso_path(X, y, n_lambdas=25)
    b = lasso_path(sp.csc_matrix(X), y, n_lambdas=25)
    assert_allclose(a.std_coefs, b.std_coefs, rtol=1e-9, atol=1e-10)


def test_collinear_design_stays_optimal():
    # duplicated and nearly duplicated columns make coordinate descent crawl
    rng = np.random.default_rng(4)
    base = rng.normal(size=(300, 12))
    X = np.hstack([base, base[:, :4], base[:, 4:8] + 1e-7 * rng.normal(size=(300, 4))])
    y = base[:, :6] @ rng.normal(size=6) + 0.1 * rng.normal(size=300)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        path = lasso_path(X, y)
    assert kkt_violation(X, y, path) <= 1e-6


def test_wide_design_of_local_bumps():
    # more columns than rows, as with a dense basis dictionary on few points
    rng = np.random.default_rng(12)
    x = np.sort(rng.uniform(0, 1, 80))
    knots = np.linspace(0, 1, 250)
    X = np.maximum(1 - np.abs(x[:, None] - knots[None]) / 0.05, 0.0) ** 3
    y = np.sin(8 * x) + 0.1 * rng.normal(size=80)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        path = lasso_path(X, y, n_lambdas=40)
    assert kkt_violation(X, y, path) <= 1e-6
    assert path.sweeps.max() < 5000


def test_zero_column_is_ignored():
    rng = np.random.default_rng(5)
    X, y = instance(rng, 40, 5)
    X[:, 2] = 1.0  # constant column vanishes after centering
    path = lasso_path(X, y, n_lambdas=15)
    assert np.all(path.coefs[:, 2] == 0)
    assert kkt_violation(X, y, path) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(10, 120), st.integers(1, 30), st.booleans())
def test_kkt_and_monotone_fit(seed, n, p, sparse):
    rng = np.random.default_rng(seed)
    X, y = instance(rng, n, p, sparse=sparse)
    path = lasso_path(X, y, n_lambdas=40)
    assert kkt_violation(X, y, path) <= 1e-6
    # fitted-value variance is the distance from y to a growing dual polytope
    ev = path.explained_variance
    assert np.all(np.diff(ev) >= -1e-9 * max(ev.max(), 1e-12))
    assert np.all(ev <= path.y_variance * (1 + 1e-9))


def test_warm_path_equals_cold_starts():
    rng = np.random.default_rng(6)
    X, y = instance(rng, 100, 20, k=6)
    path = lasso_path(X, y, n_lambdas=30)
    for k in (3, 10, 20, 29):
        cold = lasso_path(X, y, lambdas=[path.lambdas[k]])
        assert_allclose(path.std_coefs[k], cold.std_coefs[0], rtol=0, atol=1e-7)


def test_non_finite_and_bad_grid():
    X = np.ones((5, 2))
    with pytest.raises(ValueError):
        lasso_path(X, np.array([1, 2, np.nan, 4, 5.0]))
    with pytest.raises(ValueError):
        lasso_path(np.eye(5)[:, :2], np.arange(5.0), lambdas=[0.1, 0.2])


def test_lambda_grid():
    g = lambda_grid(2.0, 100, 1e-3)
    assert len(g) == 100
    assert_allclose([g[0], g[-1]], [2.0, 2e-3])
    assert np.all(np.diff(np.log(g)) < 0)


def test_cv_zero_response():
    X = np.random.default_rng(7).normal(size=(50, 4))
    path = cross_validate(X, np.zeros(50), lasso_path(X, np.zeros(50)))
    assert np.all(path.cv_mean == 0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cv_pure_noise_prefers_empty_model(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(200, 20))
    y = rng.normal(size=200)
    path = cross_validate(X, y, lasso_path(X, y), seed=seed)
    assert np.argmin(path.cv_mean) < 20


def test_cv_bookkeeping_and_determinism():
    rng = np.random.default_rng(8)
    X, y = instance(rng, 103, 12)
    a = cross_validate(X, y, lasso_path(X, y, n_lambdas=20), folds=5, seed=11)
    b = cross_validate(X, y, lasso_path(X, y, n_lambdas=20), folds=5, seed=11)
    assert_array_equal(a.cv_mean, b.cv_mean)
    assert_allclose(a.cv_folds.mean(axis=0), a.cv_mean, rtol=1e-15)
    assert_allclose(a.cv_se, a.cv_folds.std(axis=0, ddof=1) / np.sqrt(5), rtol=1e-15)
    assert a.cv_seed == 11
    ids = fold_ids(103, 5, 11)
    assert sorted(np.bincount(ids).tolist()) == [20, 20, 21, 21, 21]


def test_cv_matches_explicit_refits():
    rng = np.random.default_rng(9)
    X, y = instance(rng, 60, 6)
    path = cross_validate(X, y, lasso_path(X, y, n_lambdas=8), folds=3, seed=2)
    ids = fold_ids(60, 3, 2)
    for f in range(3):
        tr = ids != f
        sub = lasso_path(X[tr], y[tr], lambdas=path.lambdas)
        pred = sub.intercepts[None] + X[~tr] @ sub.coefs.T
        assert_allclose(path.cv_folds[f], np.mean((y[~tr, None] - pred) ** 2, axis=0),
                        rtol=1e-8)


def test_cv_needs_enough_rows():
    with pytest.raises(ValueError):
        cross_validate(np.ones((3, 2)), np.arange(3.0), folds=5)


def test_variance_target_rules():
    rng = np.random.default_rng(10)
    X, y = instance(rng, 80, 10)
    path = lasso_path(X, y)
    k, lam, act = select_by_variance_target(path, 0.0)
    assert k == 0 and lam == path.lambdas[0] and len(act) == 0
    with pytest.warns(RuntimeWarning):
        k, lam, _ = select_by_variance_target(path, path.y_variance)
    assert k == len(path.lambdas) - 1
    t = 0.5 * path.explained_variance[-1]
    k, _, act = select_by_variance_target(path, t)
    assert path.explained_variance[k] >= t and path.explained_variance[k - 1] < t
    assert_array_equal(act, np.flatnonzero(path.std_coefs[k]))
    with pytest.raises(ValueError):
        select_by_variance_target(path, -1.0)


def _fake_path(cv_mean, cv_se):
    m = len(cv_mean)
    z = np.zeros((m, 1))
    return LassoPath(np.geomspace(1, 1e-3, m), z, z, np.zeros(m), np.zeros(m), 1.0,
                     np.zeros(1), np.ones(1), np.zeros(m, int), np.asarray(cv_mean, float),
                     np.asarray(cv_se, float))


def test_one_se_rule():
    assert one_se_rule(_fake_path(np.linspace(2, 1, 10), np.zeros(10)))[0] == 9
    assert one_se_rule(_fake_path(np.ones(10), np.zeros(10)))[0] == 0
    assert one_se_rule(_fake_path([3, 2, 1.05, 1.0, 1.1], [0, 0, 0, 0.1, 0]))[0] == 2
    with pytest.raises(ValueError):
        one_se_rule(lasso_path(np.eye(4), np.arange(4.0)))


def test_path_csv(tmp_path):
    rng = np.random.default_rng(11)
    X, y = instance(rng, 30, 4)
    path = lasso_path(X, y, n_lambdas=5)
    path.to_csv(tmp_path / "p.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["lambda", "n_active", "explained_variance", "cv_mean", "cv_se"]
    assert len(rows) == 6 and rows[1][3] == ""
