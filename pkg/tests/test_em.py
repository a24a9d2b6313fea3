import csv

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.stats import multivariate_normal

from instances import random_instance
from tapkrig.em import (
    EMCache, EMConfig, e_step, full_log_likelihood, m_step, nugget_ratio_reweight, run_em,
    stopping_criterion,
)
from tapkrig.sparse_linalg import NumericError, SparseSymMatrix, cholesky


def dense_posterior(z, A, P, sigma2, B):
    S = sigma2 * A + P @ B @ P.T
    K = B @ P.T
    return K @ np.linalg.solve(S, z), B - K @ np.linalg.solve(S, K.T)


def simulate(rng, A, P, sigma2, B):
    n = A.shape[0]
    eta = rng.multivariate_normal(np.zeros(len(B)), B)
    e = np.linalg.cholesky(sigma2 * A) @ rng.normal(size=n)
    return P @ eta + e


def test_scalar_e_step():
    f = cholesky(SparseSymMatrix.from_dense([[1.0]]))
    mu, C = e_step(np.array([1.5]), f, sp.csc_matrix([[1.0]]), 0.5, np.array([[2.0]]))
    c = 1 / (1 / 0.5 + 1 / 2.0)
    assert_allclose(C, [[c]], rtol=1e-15)
    assert_allclose(mu, [c * 1.5 / 0.5], rtol=1e-15)
    mu0, C0 = e_step(np.array([0.0]), f, sp.csc_matrix([[1.0]]), 0.5, np.array([[2.0]]))
    assert mu0[0] == 0
    assert_allclose(C0, C, rtol=1e-15)


def test_e_step_matches_dense_conditioning():
    rng = np.random.default_rng(0)
    X, m, A, f, P, B = random_instance(rng, n=40, p=3)
    z = rng.normal(size=40)
    mu, C = e_step(z, f, P, 0.7, B)
    mu_d, C_d = dense_posterior(z, A.toarray(), P.toarray(), 0.7, B)
    assert_allclose(mu, mu_d, rtol=1e-8, atol=1e-10)
    assert_allclose(C, C_d, rtol=1e-8, atol=1e-10)


def test_m_step_examples():
    rng = np.random.default_rng(1)
    X, m, A, f, P, B = random_instance(rng, n=40, p=3)
    z = rng.normal(size=40)
    s, Bn = m_step(z, f, P, np.zeros(3), np.eye(3), sigma2=1.0, fix_sigma=True)
    assert s == 1.0
    assert_allclose(Bn, np.eye(3))
    s0, _ = m_step(z, f, sp.csc_matrix((40, 0)), np.zeros(0), np.zeros((0, 0)))
    assert_allclose(s0, z @ np.linalg.solve(A.toarray(), z) / 40, rtol=1e-12)
    mu, C = e_step(z, f, P, 0.7, B)
    s1, B1 = m_step(z, f, P, mu, C)
    Ad, Pd = A.toarray(), P.toarray()
    Ai = np.linalg.inv(Ad)
    ref = (z @ Ai @ z - 2 * z @ Ai @ Pd @ mu + np.trace(Pd.T @ Ai @ Pd @ (C + np.outer(mu, mu))))
    assert_allclose(s1, ref / 40, rtol=1e-10)
    assert_allclose(B1, C + np.outer(mu, mu), rtol=1e-14)


def test_sigma_update_is_expected_residual_form():
    # Monte-Carlo free check: E[(z - P eta)^T A^-1 (z - P eta) | z] by dense algebra
    rng = np.random.default_rng(2)
    X, m, A, f, P, B = random_instance(rng, n=30, p=4)
    z = rng.normal(size=30)
    mu, C = e_step(z, f, P, 1.3, B)
    Ai, Pd = np.linalg.inv(A.toarray()), P.toarray()
    r = z - Pd @ mu
    expected = r @ Ai @ r + np.trace(Pd.T @ Ai @ Pd @ C)
    assert_allclose(m_step(z, f, P, mu, C)[0], expected / 30, rtol=1e-10)


def test_stopping_criterion_examples():
    B = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert stopping_criterion(0.4, B, 0.4, B) == 0.0
    assert_allclose(stopping_criterion(0.4, B, 0.8, B), min(0.4, 0.5))
    assert_allclose(stopping_criterion(3.0, B, 6.0, B), 0.5)
    ld = np.linalg.slogdet(np.e * B)[1]
    assert_allclose(stopping_criterion(1.0, B, 1.0, np.e * B), min(2.0, 2.0 / abs(ld)),
                    rtol=1e-12)
    with pytest.raises(NumericError):
        stopping_criterion(1.0, B, 1.0, -B)


def test_stopping_criterion_zero_iff_unchanged():
    B = np.diag([1.0, 2.0])
    assert stopping_criterion(1.0, B, 1.0 + 1e-9, B) > 0
    assert stopping_criterion(1.0, B, 1.0, np.diag([1.0, 2.0 + 1e-9])) > 0


def test_loglik_scalar_and_dense():
    f = cholesky(SparseSymMatrix.from_dense([[1.0]]))
    ll = full_log_likelihood(np.array([0.8]), 0.5, f, sp.csc_matrix([[1.0]]), np.array([[2.0]]))
    assert_allclose(ll, -0.5 * np.log(2 * np.pi * 2.5) - 0.8**2 / (2 * 2.5), rtol=1e-14)
    rng = np.random.default_rng(3)
    X, m, A, f, P, B = random_instance(rng, n=40, p=3)
    z = rng.normal(size=40)
    S = 0.9 * A.toarray() + P.toarray() @ B @ P.toarray().T
    assert_allclose(full_log_likelihood(z, 0.9, f, P, B),
                    multivariate_normal(np.zeros(40), S).logpdf(z), rtol=1e-10)
    S0 = 0.9 * A.toarray()
    assert_allclose(full_log_likelihood(z, 0.9, f, None, np.zeros((0, 0))),
                    multivariate_normal(np.zeros(40), S0).logpdf(z), rtol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_em_ascent_property(seed):
    rng = np.random.default_rng(seed)
    X, m, A, f, P, B = random_instance(rng, n=int(rng.integers(20, 301)))
    z = simulate(rng, A.toarray(), P.toarray(), 0.8, B)
    st_ = run_em(z, f, P, 1.0, cfg=EMConfig(max_iter=300))
    ll = np.array([h[4] for h in st_.history])
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[1:]))


def test_run_em_records_and_converges():
    rng = np.random.default_rng(4)
    X, m, A, f, P, B = random_instance(rng, n=200, p=2)
    z = simulate(rng, A.toarray(), P.toarray(), 0.5, B)
    st_ = run_em(z, f, P, 1.0)
    assert st_.converged and st_.iterations < 2000
    crit = [h[3] for h in st_.history[1:]]
    assert all(c < 1e-3 for c in crit[-20:])
    assert st_.history[0][0] == 0 and st_.iterations == len(st_.history) - 1
    mu, C = e_step(z, f, P, st_.sigma2, st_.B)
    assert_allclose(st_.mu, mu)
    assert np.linalg.eigvalsh(st_.B).min() > 0 and np.linalg.eigvalsh(st_.C).min() > 0


def test_fix_sigma():
    rng = np.random.default_rng(5)
    X, m, A, f, P, B = random_instance(rng, n=60, p=3)
    z = rng.normal(size=60)
    st_ = run_em(z, f, P, 0.3, cfg=EMConfig(fix_sigma=True, max_iter=50))
    assert {h[1] for h in st_.history} == {0.3}


def test_zero_data_collapses_b():
    rng = np.random.default_rng(6)
    X, m, A, f, P, B = random_instance(rng, n=50, p=3)
    st_ = run_em(np.zeros(50), f, P, 1.0, cfg=EMConfig(max_iter=200, patience=1000))
    assert np.all(st_.mu == 0)
    assert np.trace(st_.B) < 1e-2 * 3


def test_cache_reuse_gives_same_result():
    rng = np.random.default_rng(7)
    X, m, A, f, P, B = random_instance(rng, n=80, p=4)
    z = rng.normal(size=80)
    cache = EMCache(z, f, P)
    a = run_em(z, f, P, 1.0, cfg=EMConfig(max_iter=30))
    b = run_em(z, f, P, 1.0, cfg=EMConfig(max_iter=30), cache=cache)
    assert_allclose(a.B, b.B, rtol=0, atol=0)


def test_config_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        EMConfig(tolerance=0)
    with pytest.raises(ValueError):
        EMConfig(patience=0)
    rng = np.random.default_rng(8)
    X, m, A, f, P, B = random_instance(rng, n=30, p=2)
    st_ = run_em(rng.normal(size=30), f, P, 1.0, cfg=EMConfig(max_iter=5))
    st_.to_csv(tmp_path / "em.csv")
    rows = list(csv.reader(open(tmp_path / "em.csv")))
    assert rows[0] == ["iter", "sigma2", "logdetB", "criterion", "loglik"]
    assert len(rows) == 7
    with pytest.raises(ValueError):
        run_em(np.ones(30), f, P, 0.0)


def test_nugget_ratio_reweight():
    assert nugget_ratio_reweight(0.7, 0.7, 0.1) == (pytest.approx(0.7), 0.1)
    w, e = nugget_ratio_reweight(1.0, 2.0, 0.5)
    assert w == 3.0 and e == 0.5
    a = nugget_ratio_reweight(1.0, 1.0 + 1e-9, 0.5)[0]
    assert abs(a - 1.0) < 1e-8
    with pytest.raises(ValueError):
        nugget_ratio_reweight(1.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        nugget_ratio_reweight(10.0, 0.5, 0.5)  # 0.5 (1 + 0.1 - 2) < 0
