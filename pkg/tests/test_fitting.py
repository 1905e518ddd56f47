import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import least_squares

from zonetrap.errors import NoConvergence, RankDeficient
from zonetrap.fitting import check_rank, levenberg_marquardt


def expdecay(x, p):
    return p[0] * np.exp(-p[1] * x) + p[2]


def expdecay_jac(x, p):
    e = np.exp(-p[1] * x)
    return np.column_stack([e, -p[0] * x * e, np.ones_like(x)])


@given(st.floats(0.5, 3), st.floats(0.2, 2), st.floats(-1, 1), st.integers(0, 2 ** 31))
def test_agrees_with_scipy_least_squares(a, k, c, seed):
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 5, 60)
    sigma = np.full_like(x, 0.02)
    y = expdecay(x, [a, k, c]) + rng.normal(0, 0.02, x.size)
    p0 = np.array([1.2 * a, 0.8 * k, c + 0.1])
    fit = levenberg_marquardt(expdecay, expdecay_jac, x, y, sigma, p0)
    ref = least_squares(lambda p: (expdecay(x, p) - y) / sigma, p0, jac=lambda p: expdecay_jac(x, p) / sigma[:, None],
                        method="lm", xtol=1e-14, ftol=1e-14)
    # both stop at the same minimum up to a sliver of the statistical uncertainty
    assert np.all(np.abs(fit.params - ref.x) <= 1e-4 * fit.errors)
    assert fit.chi2 <= 2 * ref.cost * (1 + 1e-9)
    jw = ref.jac
    cov = np.linalg.inv(jw.T @ jw)
    assert np.allclose(fit.covariance, cov, rtol=1e-4)
    assert fit.dof == x.size - 3


def test_noiseless_recovery_exact():
    x = np.linspace(0, 5, 30)
    y = expdecay(x, [2.0, 0.7, 0.1])
    fit = levenberg_marquardt(expdecay, expdecay_jac, x, y, np.ones_like(x), [1.0, 1.0, 0.0])
    assert np.allclose(fit.params, [2.0, 0.7, 0.1], atol=1e-10)


def test_relative_sigma_scales_covariance():
    rng = np.random.default_rng(3)
    x = np.linspace(0, 5, 80)
    y = expdecay(x, [2.0, 0.7, 0.1]) + rng.normal(0, 0.05, x.size)
    f1 = levenberg_marquardt(expdecay, expdecay_jac, x, y, np.ones_like(x), [1, 1, 0], absolute_sigma=False)
    f2 = levenberg_marquardt(expdecay, expdecay_jac, x, y, 10 * np.ones_like(x), [1, 1, 0], absolute_sigma=False)
    assert np.allclose(f1.covariance, f2.covariance, rtol=1e-6)
    assert f1.reduced_chi2 == pytest.approx(np.sum((y - expdecay(x, f1.params)) ** 2) / 77, rel=1e-6)


def test_rank_deficiency_detected():
    with pytest.raises(RankDeficient):
        check_rank(np.column_stack([np.arange(5.0), 2 * np.arange(5.0)]))
    check_rank(np.eye(3))


def test_iteration_cap():
    x = np.linspace(0, 5, 30)
    y = expdecay(x, [2.0, 0.7, 0.1])
    with pytest.raises(NoConvergence):
        levenberg_marquardt(expdecay, expdecay_jac, x, y, np.ones_like(x), [50.0, 9.0, 3.0], max_iter=1)
