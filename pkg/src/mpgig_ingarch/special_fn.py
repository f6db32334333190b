"""
Log-scale modified Bessel function of the second kind for real order.

Every density and conditional expectation in the package is written in terms
of :math:`\\log K_\\nu(x)`, so the functions here never exponentiate a raw
Bessel value except inside ratios.

The primary evaluation uses the exponentially scaled AMOS routine
(:func:`scipy.special.kve`).  When that overflows (large order relative to the
argument) the uniform asymptotic (Debye) expansion is evaluated directly in
log scale.  For orders too small for the expansion, which can only overflow
for arguments far below ``1e-6``, the small-argument limit is used.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial.polynomial import polyval
from scipy.special import gammaln, kve

from mpgig_ingarch.exceptions import DomainError

__all__ = ["bessel_ratio", "dlog_bessel_k_dorder", "log_bessel_k"]

_DEBYE_TERMS = 16
_DEBYE_MIN_ORDER = 30.0
# K is even in the order with zero slope at 0; scipy returns nan for subnormal orders
_TINY_ORDER = 1e-150


@lru_cache(maxsize=1)
def _debye_coefficients() -> np.ndarray:
    """Coefficients of u_k with alternating sign folded in, shape (deg + 1, terms)."""
    polys = _debye_polynomials()
    deg = max(u.degree() for u in polys)
    coef = np.zeros((deg + 1, len(polys)))
    for k, u in enumerate(polys):
        coef[: u.coef.size, k] = u.coef * (-1.0) ** k
    return coef


@lru_cache(maxsize=1)
def _debye_polynomials() -> tuple[Polynomial, ...]:
    # u_{k+1}(p) = p^2 (1 - p^2) u_k'(p) / 2 + (1/8) int_0^p (1 - 5 t^2) u_k(t) dt
    polys = [Polynomial([1.0])]
    weight = Polynomial([1.0, 0.0, -5.0])
    half_p2_1mp2 = Polynomial([0.0, 0.0, 0.5, 0.0, -0.5])
    for _ in range(_DEBYE_TERMS - 1):
        u = polys[-1]
        nxt = half_p2_1mp2 * u.deriv() + (weight * u).integ(lbnd=0.0) / 8.0
        polys.append(nxt)
    return tuple(polys)


def _log_k_debye(nu: np.ndarray, x: np.ndarray) -> np.ndarray:
    z = x / nu
    root = np.sqrt(1.0 + z * z)
    eta = root + np.log(z) - np.log1p(root)
    p = 1.0 / root
    terms = polyval(p, _debye_coefficients())  # (terms, n)
    powers = nu[None, :] ** -np.arange(terms.shape[0])[:, None]
    series = np.sum(terms * powers, axis=0)
    return (
        0.5 * np.log(np.pi / (2.0 * nu))
        - nu * eta
        - 0.5 * np.log(root)
        + np.log(series)
    )


def _log_k_small_x(nu: np.ndarray, x: np.ndarray) -> np.ndarray:
    return gammaln(nu) + (nu - 1.0) * np.log(2.0) - nu * np.log(x)


def log_bessel_k(order, x):
    """
    Logarithm of the modified Bessel function of the second kind.

    Parameters
    ----------
    order : float or ndarray
        Real order :math:`\\nu`. Only :math:`|\\nu|` matters.
    x : float or ndarray
        Positive argument.

    Returns
    -------
    float or ndarray
        :math:`\\log K_\\nu(x)`, broadcast over the inputs.

    Raises
    ------
    DomainError
        If any argument is non-positive or any input is not finite.
    """
    if isinstance(order, (float, int)) and isinstance(x, (float, int)):
        # scalar fast path; falls through on overflow or bad input
        if x > 0.0 and math.isfinite(order) and math.isfinite(x):
            order = abs(order)
            v = kve(order if order >= _TINY_ORDER else 0.0, x)
            if 0.0 < v < math.inf:
                return math.log(v) - x
    nu = np.abs(np.asarray(order, dtype=float))
    nu = np.where(nu < _TINY_ORDER, 0.0, nu)
    x = np.asarray(x, dtype=float)
    scalar = nu.ndim == 0 and x.ndim == 0
    if not (np.all(np.isfinite(nu)) and np.all(np.isfinite(x))):
        raise DomainError("log_bessel_k requires finite order and argument")
    if np.any(x <= 0.0):
        raise DomainError("log_bessel_k requires a positive argument")
    nu, x = np.broadcast_arrays(nu, x)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = np.log(kve(nu, x)) - x
    bad = ~np.isfinite(out)
    if np.any(bad):
        out = np.array(out, copy=True)
        big = bad & (nu >= _DEBYE_MIN_ORDER)
        if np.any(big):
            out[big] = _log_k_debye(nu[big], x[big])
        small = bad & ~big
        if np.any(small):
            out[small] = _log_k_small_x(nu[small], x[small])
    return float(out) if scalar else out


def bessel_ratio(alpha, k, phi):
    """Ratio ``K_{alpha+k}(phi) / K_alpha(phi)`` evaluated through log values."""
    if np.any(np.asarray(k) < 1):
        raise DomainError("bessel_ratio requires k >= 1")
    if isinstance(alpha, (float, int)) and isinstance(phi, (float, int)):
        return math.exp(log_bessel_k(alpha + k, phi) - log_bessel_k(float(alpha), phi))
    alpha = np.asarray(alpha, dtype=float)
    out = np.exp(log_bessel_k(alpha + k, phi) - log_bessel_k(alpha, phi))
    return float(out) if np.ndim(out) == 0 else out


def dlog_bessel_k_dorder(order, x):
    """
    Derivative of :math:`\\log K_\\nu(x)` with respect to the order.

    Central difference with step ``max(1e-5, 1e-5 * |order|)``; there is no
    closed form for the order derivative at general real order.
    """
    if isinstance(order, (float, int)) and isinstance(x, (float, int)):
        h = max(1e-5, 1e-5 * abs(order))
        return (log_bessel_k(order + h, x) - log_bessel_k(order - h, x)) / (2.0 * h)
    order = np.asarray(order, dtype=float)
    h = np.maximum(1e-5, 1e-5 * np.abs(order))
    out = (log_bessel_k(order + h, x) - log_bessel_k(order - h, x)) / (2.0 * h)
    return float(out) if np.ndim(out) == 0 else out
