import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from tapkrig.kernels import (
    FAMILIES, Kernel, KernelParameterError, KernelParams, LocalParamField, TaperedKernel,
    anisotropy_matrix, correlation, eval_kernel, eval_nonstationary_matern, eval_tapered,
    matern_shape, nonstationary_matern_matrix,
)

# frozen with mpmath at 30 digits: 2^(1-nu)/Gamma(nu) h^nu K_nu(h)
MATERN_REF = [
    (0.3, 0.7, 0.841352645044347154822668369815),
    (1.2, 1.3, 0.613997508584610072361954527399),
    (2.5, 3.1, 0.535558421191268485047768114239),
    (0.05, 0.5, 0.951229424500714006451233297826),
]

families = st.sampled_from(FAMILIES)
sills = st.floats(0.0, 10.0)
scales = st.floats(1e-3, 10.0)
nus = st.floats(0.1, 5.0)


def _kernel(family, sill, scale, nu):
    return Kernel(family, KernelParams(sill, scale, nu if family == "matern" else None))


def test_spherical_trivial():
    p = KernelParams(1.0, 0.05)
    assert eval_kernel("spherical", p, 0.0) == 1.0
    assert eval_kernel("spherical", p, 0.06) == 0.0
    assert eval_kernel("spherical", p, 0.05) == 0.0


def test_exponential_value():
    assert_allclose(eval_kernel("exponential", KernelParams(0.5, 0.1), 0.1),
                    0.183939720585721160797761885081, rtol=1e-14)


def test_tapered_examples():
    k = TaperedKernel(Kernel("exponential", KernelParams(1.0, 0.1)), "spherical", 0.025)
    assert eval_tapered(k, [0.3, 0.3], [0.3, 0.3]) == 1.0
    assert eval_tapered(k, [0.0, 0.0], [0.03, 0.0]) == 0.0
    assert_allclose(eval_tapered(k, [0.0, 0.0], [0.0, 0.01]),
                    0.390889764591534535606955593681, rtol=1e-14)


@pytest.mark.parametrize("h,nu,ref", MATERN_REF)
def test_matern_against_mpmath(h, nu, ref):
    assert_allclose(matern_shape(h, nu), ref, rtol=1e-12)


@pytest.mark.parametrize("nu,closed", [
    (0.5, lambda r: np.exp(-r)),
    (1.5, lambda r: (1 + r) * np.exp(-r)),
    (2.5, lambda r: (1 + r + r * r / 3) * np.exp(-r)),
])
def test_matern_half_integer(nu, closed):
    r = np.linspace(0, 8, 81)
    assert_allclose(matern_shape(r, nu), closed(r), rtol=1e-10, atol=1e-300)


def test_matern_large_argument_underflows_to_zero():
    assert matern_shape(1e4, 1.0) == 0.0
    assert np.isfinite(matern_shape(50.0, 30.0))


def test_compact_families_vanish_and_are_continuous():
    r = np.array([0.0, 1 - 1e-9, 1.0, 1.5])
    for fam in ("spherical", "cubic", "wendland2"):
        v = correlation(fam, r)
        assert v[0] == 1.0
        assert abs(v[1]) < 1e-7
        assert v[2] == 0.0 and v[3] == 0.0


def test_wendland_polynomial():
    r = 0.3
    assert_allclose(correlation("wendland2", r), (1 - r) ** 6 * (35 * r * r + 18 * r + 3) / 3,
                    rtol=1e-15)


def test_cubic_polynomial():
    r = 0.4
    ref = 1 - 7 * r**2 + 35 / 4 * r**3 - 7 / 2 * r**5 + 3 / 4 * r**7
    assert_allclose(correlation("cubic", r), ref, rtol=1e-14)


def test_parameter_errors():
    with pytest.raises(KernelParameterError):
        KernelParams(1.0, 0.0)
    with pytest.raises(KernelParameterError):
        KernelParams(-1.0, 1.0)
    with pytest.raises(KernelParameterError):
        Kernel("matern", KernelParams(1.0, 1.0))
    with pytest.raises(KernelParameterError):
        Kernel("bessel")
    with pytest.raises(KernelParameterError):
        eval_kernel("exponential", KernelParams(), -0.1)
    with pytest.raises(KernelParameterError):
        TaperedKernel(Kernel("exponential"), "gaussian", 0.1)


@given(families, sills, scales, nus)
def test_value_at_origin_is_sill(family, sill, scale, nu):
    assert _kernel(family, sill, scale, nu)(0.0) == sill


@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), scales, st.floats(1e-3, 0.5))
def test_tapered_symmetry_and_support(xy, scale, tau):
    k = TaperedKernel(Kernel("exponential", KernelParams(1.3, scale)), "spherical", tau)
    x, y = np.array(xy[:2]), np.array(xy[2:])
    assert eval_tapered(k, x, y) == eval_tapered(k, y, x)
    if np.linalg.norm(x - y) >= tau:
        assert eval_tapered(k, x, y) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["exponential", "gaussian", "matern"]),
       st.sampled_from(["spherical", "cubic", "wendland2"]))
def test_tapered_gram_is_psd(seed, base, taper):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (20, 2))
    k = TaperedKernel(Kernel(base, KernelParams(1.0, rng.uniform(0.05, 1),
                                                1.2 if base == "matern" else None)),
                      taper, rng.uniform(0.1, 1.5))
    K = k(np.linalg.norm(X[:, None] - X[None], axis=-1))
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * np.trace(K)


def test_anisotropy_matrix():
    S = anisotropy_matrix(2.0, 0.5, np.pi / 3)
    R = np.array([[np.cos(np.pi / 3), -np.sin(np.pi / 3)], [np.sin(np.pi / 3), np.cos(np.pi / 3)]])
    assert_allclose(S, R @ np.diag([4.0, 0.25]) @ R.T, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("a,nu", [(0.3, 0.5), (0.2, 1.5), (0.7, 0.9)])
def test_nonstationary_constant_field_matches_matern(a, nu):
    import mpmath as mp
    f = LocalParamField.constant(a, a, 0.4, nu)
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 1, (6, 2))
    K = nonstationary_matern_matrix(f, X)
    for i in range(6):
        for j in range(6):
            h = mp.mpf(float(np.linalg.norm(X[i] - X[j]))) / a
            ref = 1.0 if h == 0 else float(2 ** (1 - mp.mpf(nu)) / mp.gamma(nu) * h**nu
                                           * mp.besselk(nu, h))
            assert_allclose(K[i, j], ref, rtol=1e-10)


def test_nonstationary_constant_anisotropic_uses_mahalanobis_distance():
    f = LocalParamField.constant(0.4, 0.1, np.pi / 6, 1.1)
    x, y = np.array([0.2, 0.3]), np.array([0.35, 0.4])
    S = anisotropy_matrix(0.4, 0.1, np.pi / 6)
    h = np.sqrt((x - y) @ np.linalg.solve(S, x - y))
    assert_allclose(eval_nonstationary_matern(f, x, y), matern_shape(h, 1.1), rtol=1e-12)


def _varying_field():
    xs = ys = np.linspace(0, 1, 5)
    g = np.add.outer(ys, xs)
    return LocalParamField(xs, ys, 0.1 + 0.2 * g, 0.05 + 0.1 * g[::-1], np.pi * g / 2.5,
                           0.5 + 0.7 * g)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_nonstationary_symmetry_and_diagonal(seed):
    f = _varying_field()
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 1, (2, 2))
    assert eval_nonstationary_matern(f, x, y) == eval_nonstationary_matern(f, y, x)
    assert_allclose(eval_nonstationary_matern(f, x, x), 1.0, rtol=1e-14)
    Y = rng.uniform(0, 1, (200, 2))
    assert nonstationary_matern_matrix(f, x[None], Y).max() <= 1.0 + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_nonstationary_gram_is_psd(seed):
    rng = np.random.default_rng(seed)
    for f in (LocalParamField.constant(rng.uniform(0.05, 1), rng.uniform(0.05, 1),
                                       rng.uniform(0, np.pi), rng.uniform(0.3, 3)),
              _varying_field()):
        K = nonstationary_matern_matrix(f, rng.uniform(0, 1, (20, 2)))
        assert np.linalg.eigvalsh(K).min() >= -1e-10 * np.trace(K)


def test_param_field_validation():
    with pytest.raises(KernelParameterError):
        LocalParamField.constant(0.0, 1.0, 0.0, 1.0)
    with pytest.raises(KernelParameterError):
        LocalParamField.constant(1.0, 1.0, 0.0, -1.0)
