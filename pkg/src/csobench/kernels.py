"""Matérn covariance with exact evaluation for integer and half-integer smoothness."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import k0e, k1e


def _nu_kind(nu):
    if math.isinf(nu) and nu > 0:
        return "gaussian"
    if nu <= 0 or not math.isfinite(nu):
        return None
    if float(nu).is_integer():
        return "integer"
    if float(2 * nu).is_integer():
        return "half"
    return None


@dataclass(frozen=True)
class MaternKernel:
    nu: float = 10.0
    length_scale: float = 20.0
    variance: float = 1.0

    def __post_init__(self):
        if _nu_kind(self.nu) is None:
            raise ValueError(
                f"unsupported smoothness nu={self.nu}: need a positive integer, half-integer or inf"
            )
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if not self.variance > 0:
            raise ValueError("variance must be positive")

    def __call__(self, d):
        return matern(d, self)


def bessel_k_scaled(n, x):
    """``exp(x) * K_n(x)`` for integer ``n >= 0`` and ``x > 0`` by upward recurrence.

    K_{m+1}(x) = K_{m-1}(x) + (2m / x) K_m(x) is stable in the upward
    direction; scaling by exp(x) keeps large arguments from underflowing.
    """
    x = np.asarray(x, dtype=np.float64)
    km1 = k0e(x)
    if n == 0:
        return km1
    k = k1e(x)
    for m in range(1, n):
        km1, k = k, km1 + (2.0 * m / x) * k
    return k


def _matern_integer(r, nu):
    # r = sqrt(2 nu) d / l; normalized so that the r -> 0 limit is exactly 1.
    out = np.ones_like(r)
    # Below this r the limit is exact to double precision, or K_nu would overflow.
    r_small = max(1e-8, 10.0 ** (-250.0 / nu))
    m = r >= r_small
    if np.any(m):
        rm = r[m]
        log_c = (1.0 - nu) * math.log(2.0) - math.lgamma(nu)
        out[m] = np.exp(log_c + nu * np.log(rm) - rm + np.log(bessel_k_scaled(int(nu), rm)))
    return out


def _matern_half(r, nu):
    p = int(nu - 0.5)
    poly = np.zeros_like(r)
    for i in range(p + 1):
        coef = math.factorial(p + i) / (math.factorial(i) * math.factorial(p - i))
        poly += coef * (2.0 * r) ** (p - i)
    return np.exp(-r) * poly * math.factorial(p) / math.factorial(2 * p)


def matern(d, kernel):
    """Matérn covariance at distance(s) ``d``."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    nu, ell = kernel.nu, kernel.length_scale
    kind = _nu_kind(nu)
    if kind == "gaussian":
        return kernel.variance * np.exp(-0.5 * (d / ell) ** 2)
    r = np.atleast_1d(math.sqrt(2.0 * nu) * d / ell)
    if kind == "integer":
        out = _matern_integer(r, nu)
    elif kind == "half":
        out = _matern_half(r, nu)
    else:
        raise ValueError(f"unsupported smoothness nu={nu}")
    return kernel.variance * out.reshape(d.shape)
