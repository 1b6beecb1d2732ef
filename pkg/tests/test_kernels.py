import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from csobench.kernels import MaternKernel, bessel_k_scaled, matern


def _log_bessel_k(nu, x):
    # K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt, integrated around the peak
    # of the integrand with the peak value factored out to avoid overflow.
    def g(t):
        return -x * math.cosh(t) + nu * t + math.log1p(math.exp(-2 * nu * t)) - math.log(2.0)

    t_star = math.asinh(nu / x)
    g0 = g(t_star)

    def f(t):
        return math.exp(g(t) - g0) if t < 700 else 0.0

    a, _ = integrate.quad(f, 0.0, t_star, epsabs=0, epsrel=1e-13, limit=200)
    b, _ = integrate.quad(f, t_star, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    return g0 + math.log(a + b)


def matern_oracle(d, nu, ell, var=1.0):
    if d == 0:
        return var
    r = math.sqrt(2 * nu) * d / ell
    log_c = (1 - nu) * math.log(2.0) - math.lgamma(nu)
    return var * math.exp(log_c + nu * math.log(r) + _log_bessel_k(nu, r))


class TestBessel:
    @pytest.mark.parametrize("n", [0, 1, 2, 5, 10])
    def test_against_scipy_kve(self, n):
        x = np.geomspace(1e-3, 500, 60)
        np.testing.assert_allclose(bessel_k_scaled(n, x), special.kve(n, x), rtol=1e-12)


class TestMatern:
    def test_zero_distance_is_variance(self):
        for nu in (0.5, 1.5, 2.5, 1.0, 10.0, math.inf):
            assert matern(0.0, MaternKernel(nu, 3.0, 2.5)) == pytest.approx(2.5, rel=1e-14)

    def test_half_closed_forms(self):
        d = np.linspace(0, 10, 41)
        ell = 2.0
        r = d / ell
        np.testing.assert_allclose(matern(d, MaternKernel(0.5, ell)), np.exp(-r), rtol=1e-13)
        s3 = math.sqrt(3) * r
        np.testing.assert_allclose(matern(d, MaternKernel(1.5, ell)), (1 + s3) * np.exp(-s3), rtol=1e-13)
        s5 = math.sqrt(5) * r
        np.testing.assert_allclose(
            matern(d, MaternKernel(2.5, ell)), (1 + s5 + s5**2 / 3) * np.exp(-s5), rtol=1e-13
        )

    def test_gaussian_limit(self):
        d = np.linspace(0, 50, 11)
        np.testing.assert_allclose(matern(d, MaternKernel(math.inf, 20.0)), np.exp(-0.5 * (d / 20) ** 2))

    def test_large_nu_approaches_gaussian(self):
        d = np.linspace(0, 40, 9)
        far = np.max(np.abs(matern(d, MaternKernel(2, 20.0)) - matern(d, MaternKernel(math.inf, 20.0))))
        near = np.max(np.abs(matern(d, MaternKernel(60, 20.0)) - matern(d, MaternKernel(math.inf, 20.0))))
        assert near < far / 5

    def test_quadrature_oracle_default_kernel(self):
        rng = np.random.default_rng(0)
        d = rng.uniform(0, 100, 100)
        got = matern(d, MaternKernel(10, 20.0))
        want = np.array([matern_oracle(x, 10, 20.0) for x in d])
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-300)

    @pytest.mark.parametrize("nu", [1, 3, 7, 25])
    def test_quadrature_oracle_other_integers(self, nu):
        d = np.array([1e-3, 0.5, 4.0, 20.0, 55.0])
        want = [matern_oracle(x, nu, 10.0) for x in d]
        np.testing.assert_allclose(matern(d, MaternKernel(nu, 10.0)), want, rtol=1e-8)

    def test_tiny_distance_continuous(self):
        k = MaternKernel(10, 20.0)
        vals = matern(np.array([0.0, 1e-12, 1e-9, 1e-6]), k)
        np.testing.assert_allclose(vals, 1.0, atol=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(
        nu=st.sampled_from([0.5, 1.5, 2.5, 1.0, 4.0, 10.0, math.inf]),
        ell=st.floats(0.1, 100),
        a=st.floats(0, 500),
        b=st.floats(0, 500),
    )
    def test_monotone_and_bounded(self, nu, ell, a, b):
        lo, hi = sorted((a, b))
        k = MaternKernel(nu, ell)
        vlo, vhi = matern(lo, k), matern(hi, k)
        assert 0.0 <= vhi <= vlo * (1 + 1e-12) <= 1.0 + 1e-12

    def test_shape_preserved(self):
        assert matern(np.zeros((3, 4)), MaternKernel()).shape == (3, 4)

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            matern(-1.0, MaternKernel())

    @pytest.mark.parametrize("nu", [0.0, -1.0, 0.7, 2.25, math.nan, -math.inf])
    def test_unsupported_nu(self, nu):
        with pytest.raises(ValueError, match="unsupported smoothness"):
            MaternKernel(nu)

    @pytest.mark.parametrize("kw", [{"length_scale": 0.0}, {"variance": -1.0}])
    def test_bad_hyperparameters(self, kw):
        with pytest.raises(ValueError):
            MaternKernel(**kw)

    def test_gram_matrix_positive_definite(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(40, 21)) * 5
        D = np.sqrt(((X[:, None] - X[None]) ** 2).sum(-1))
        for nu in (0.5, 2.5, 10.0):
            w = np.linalg.eigvalsh(matern(D, MaternKernel(nu, 20.0)))
            assert w.min() > -1e-10
