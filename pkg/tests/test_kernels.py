import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowbo.kernels import (InvalidInputError, KernelParams, matern52, matern52_derivatives,
                            matern52_eval)


def fd_grad_y(x, y, p, h=1e-5):
    g = np.zeros_like(y)
    for i in range(y.size):
        e = np.zeros_like(y)
        e[i] = h
        g[i] = (matern52_eval(x, y + e, p) - matern52_eval(x, y - e, p)) / (2 * h)
    return g


def fd_hess_xy(x, y, p, h=1e-5):
    """Central differences in x of the analytic y-gradient."""
    d = x.size
    H = np.zeros((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        H[i] = (matern52_derivatives(x + e, y, p)[0] - matern52_derivatives(x - e, y, p)[0]) / (2 * h)
    return H


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_zero_distance_gives_amplitude():
    p = KernelParams(1.0, 0.7)
    for d in (1, 3, 5):
        x = np.linspace(-1, 1, d)
        assert matern52_eval(x, x, p) == 1.0


def test_against_high_precision_formula():
    # x = 0, y = 1, lengthscale 0.5, amplitude 1
    mpmath.mp.dps = 50
    s = mpmath.sqrt(5) * 1 / mpmath.mpf("0.5")
    expected = (1 + s + s**2 / 3) * mpmath.exp(-s)
    got = matern52_eval([0.0], [1.0], KernelParams(1.0, 0.5))
    assert got == pytest.approx(float(expected), rel=1e-14)


def test_noise_not_added_to_evaluations():
    p = KernelParams(2.0, 1.0, noise_variance=0.5)
    assert matern52_eval([0.3], [0.3], p) == 2.0


def test_non_finite_inputs_rejected():
    with pytest.raises(InvalidInputError):
        matern52_eval([np.nan], [0.0], KernelParams())
    with pytest.raises(InvalidInputError):
        KernelParams(amplitude=-1.0)
    with pytest.raises(InvalidInputError):
        KernelParams(noise_variance=-1e-3)


def test_params_roundtrip():
    p = KernelParams(1.5, 0.25, 1e-4)
    assert KernelParams.from_dict(p.to_dict()) == p


def test_diagonal_derivatives():
    ell = 0.8
    p = KernelParams(1.0, ell)
    x = np.array([0.2, -0.4, 1.1])
    g, H = matern52_derivatives(x, x, p)
    np.testing.assert_array_equal(g, 0.0)
    np.testing.assert_allclose(H, 5.0 / (3 * ell**2) * np.eye(3), rtol=1e-14)
    assert rel_err(fd_hess_xy(x, x, p), H) < 1e-5


def test_derivatives_match_finite_differences_d3():
    rng = np.random.default_rng(3)
    p = KernelParams(1.3, 0.9)
    x, y = rng.normal(size=3), rng.normal(size=3)
    g, H = matern52_derivatives(x, y, p)
    assert rel_err(g, fd_grad_y(x, y, p)) < 1e-5
    assert rel_err(H, fd_hess_xy(x, y, p)) < 1e-5


def test_gram_positive_definite():
    rng = np.random.default_rng(0)
    X = rng.uniform(-2, 2, size=(20, 3))
    K = matern52(X, X, KernelParams(1.0, 0.6))
    np.linalg.cholesky(K + 1e-10 * np.eye(20))


finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite),
       st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_symmetry_and_odd_gradient(x, y, ell, amp):
    p = KernelParams(amp, ell)
    assert matern52_eval(x, y, p) == matern52_eval(y, x, p)
    gxy, Hxy = matern52_derivatives(x, y, p)
    gyx, Hyx = matern52_derivatives(y, x, p)
    np.testing.assert_allclose(gxy, -gyx, rtol=0, atol=1e-15)
    np.testing.assert_allclose(Hxy, Hyx.T, atol=1e-15)
