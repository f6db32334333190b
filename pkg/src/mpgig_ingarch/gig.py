"""
Generalized inverse-Gaussian distribution GIG(a, b, alpha).

The density is

.. math::
    g(z) = \\frac{(a/b)^{\\alpha/2}}{2 K_\\alpha(\\sqrt{ab})} z^{\\alpha-1}
    \\exp\\{-(a z + b / z) / 2\\},\\qquad z > 0,

with ``a > 0`` and ``b > 0``.  The bi-parameter law used for the latent
mixing variable is ``GIG(phi, phi, alpha)``.

Random variates follow the three-branch generator of Hörmann and Leydold
(ratio-of-uniforms with and without mode shift, plus a dedicated rejection
method for small order and concentration).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mpgig_ingarch.exceptions import DomainError
from mpgig_ingarch.special_fn import dlog_bessel_k_dorder, log_bessel_k

__all__ = ["GigParams", "log_pdf", "mean_log", "moment", "sample"]


@dataclass(frozen=True)
class GigParams:
    """Parameters of GIG(a, b, alpha); ``a`` multiplies z, ``b`` multiplies 1/z."""

    a: float
    b: float
    alpha: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.a) and np.isfinite(self.b) and np.isfinite(self.alpha)):
            raise DomainError("GIG parameters must be finite")
        if self.a <= 0 or self.b <= 0:
            raise DomainError(f"GIG requires a > 0 and b > 0, got a={self.a}, b={self.b}")

    @classmethod
    def symmetric(cls, phi: float, alpha: float) -> "GigParams":
        return cls(phi, phi, alpha)

    @property
    def omega(self) -> float:
        return float(np.sqrt(self.a * self.b))


def log_pdf(params: GigParams, z):
    """Log density at ``z > 0`` (scalar or array)."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("GIG log_pdf requires z > 0")
    a, b, alpha = params.a, params.b, params.alpha
    out = (
        0.5 * alpha * np.log(a / b)
        - np.log(2.0)
        - log_bessel_k(alpha, params.omega)
        + (alpha - 1.0) * np.log(z)
        - 0.5 * (a * z + b / z)
    )
    return float(out) if out.ndim == 0 else out


def moment(params: GigParams, u: float) -> float:
    """E(Z^u) = (b/a)^{u/2} K_{alpha+u}(sqrt(ab)) / K_alpha(sqrt(ab))."""
    a, b, alpha = params.a, params.b, params.alpha
    w = params.omega
    return float(
        np.exp(0.5 * u * np.log(b / a) + log_bessel_k(alpha + u, w) - log_bessel_k(alpha, w))
    )


def mean_log(params: GigParams) -> float:
    """E(log Z), through the order derivative of log K."""
    return float(
        dlog_bessel_k_dorder(params.alpha, params.omega) + 0.5 * np.log(params.b / params.a)
    )


def _mode(lam, omega):
    # mode of y^(lam-1) exp(-omega (y + 1/y) / 2)
    lam = np.asarray(lam, dtype=float)
    return np.where(
        lam >= 1.0,
        (np.sqrt((lam - 1.0) ** 2 + omega**2) + (lam - 1.0)) / omega,
        omega / (np.sqrt((1.0 - lam) ** 2 + omega**2) + (1.0 - lam)),
    )


def _collect(draw, n: int, rng: np.random.Generator) -> np.ndarray:
    """Run a vectorized rejection step until ``n`` variates are accepted."""
    out = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        batch = draw(int(need * 1.3) + 8, rng)
        take = min(need, batch.size)
        out[filled : filled + take] = batch[:take]
        filled += take
    return out


def _rou_noshift(lam: float, omega: float):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = float(_mode(lam, omega))
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + np.sqrt((lam + 1.0) ** 2 + omega**2)) / omega
    um = np.exp(0.5 * (lam + 1.0) * np.log(ym) - s * (ym + 1.0 / ym) - nc)

    def draw(size, rng):
        u = um * rng.random(size)
        v = rng.random(size)
        x = u / v
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = np.log(v) <= t * np.log(x) - s * (x + 1.0 / x) - nc
        return x[ok & (x > 0)]

    return draw


def _rou_shift(lam: float, omega: float):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = float(_mode(lam, omega))
    nc = t * np.log(xm) - s * (xm + 1.0 / xm)

    # the bounding rectangle comes from the two real roots of a depressed cubic
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    fi = np.arccos(-q / (2.0 * np.sqrt(-(p**3) / 27.0)))
    fak = 2.0 * np.sqrt(-p / 3.0)
    y1 = fak * np.cos(fi / 3.0) - a / 3.0
    y2 = fak * np.cos(fi / 3.0 + 4.0 / 3.0 * np.pi) - a / 3.0
    uplus = (y1 - xm) * np.exp(t * np.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * np.exp(t * np.log(y2) - s * (y2 + 1.0 / y2) - nc)

    def draw(size, rng):
        u = uminus + rng.random(size) * (uplus - uminus)
        v = rng.random(size)
        x = u / v + xm
        pos = x > 0
        x = x[pos]
        v = v[pos]
        ok = np.log(v) <= t * np.log(x) - s * (x + 1.0 / x) - nc
        return x[ok]

    return draw


def _small_order(lam: float, omega: float):
    # rejection from a piecewise hat; valid for 0 <= lam < 1 and small omega
    xm = float(_mode(lam, omega))
    x0 = omega / (1.0 - lam)
    k0 = np.exp((lam - 1.0) * np.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    a0 = k0 * x0
    if x0 >= 2.0 / omega:
        k1 = 0.0
        a1 = 0.0
        k2 = x0 ** (lam - 1.0)
        a2 = k2 * 2.0 * np.exp(-omega * x0 / 2.0) / omega
    else:
        k1 = np.exp(-omega)
        if lam == 0.0:
            a1 = k1 * np.log(2.0 / (omega * omega))
        else:
            a1 = k1 / lam * ((2.0 / omega) ** lam - x0**lam)
        k2 = (2.0 / omega) ** (lam - 1.0)
        a2 = k2 * 2.0 * np.exp(-1.0) / omega
    total = a0 + a1 + a2
    tail_start = max(x0, 2.0 / omega)

    def draw(size, rng):
        v = total * rng.random(size)
        x = np.empty(size)
        hx = np.empty(size)
        r0 = v <= a0
        x[r0] = x0 * v[r0] / a0
        hx[r0] = k0
        v1 = v - a0
        r1 = ~r0 & (v1 <= a1)
        if np.any(r1):
            if lam == 0.0:
                x[r1] = omega * np.exp(np.exp(omega) * v1[r1])
                hx[r1] = k1 / x[r1]
            else:
                x[r1] = (x0**lam + lam / k1 * v1[r1]) ** (1.0 / lam)
                hx[r1] = k1 * x[r1] ** (lam - 1.0)
        r2 = ~r0 & ~r1
        v2 = v1 - a1
        x[r2] = -2.0 / omega * np.log(
            np.exp(-omega / 2.0 * tail_start) - omega / (2.0 * k2) * v2[r2]
        )
        hx[r2] = k2 * np.exp(-omega / 2.0 * x[r2])
        u = rng.random(size) * hx
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = np.log(u) <= (lam - 1.0) * np.log(x) - omega / 2.0 * (x + 1.0 / x)
        return x[ok & np.isfinite(x) & (x > 0)]

    return draw


def _standard_sampler(lam: float, omega: float):
    if lam > 2.0 or omega > 3.0:
        return _rou_shift(lam, omega)
    if lam >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        return _rou_noshift(lam, omega)
    return _small_order(lam, omega)


def sample(params: GigParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw ``n`` independent GIG(a, b, alpha) variates.

    Parameters
    ----------
    params : GigParams
    n : int
        Number of draws, ``n >= 1``.
    rng : numpy.random.Generator
        Explicit random stream; the result is a deterministic function of its state.

    Returns
    -------
    ndarray
        Array of shape ``(n,)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lam = abs(params.alpha)
    omega = params.omega
    scale = np.sqrt(params.b / params.a)
    y = _collect(_standard_sampler(lam, omega), n, rng)
    if params.alpha < 0:
        return scale / y
    return scale * y
