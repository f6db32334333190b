"""
Multivariate Poisson generalized inverse-Gaussian distribution MPGIG_p.

``Y_i | Z ~ Poisson(lambda_i Z)`` independently for ``i = 1..p`` with a shared
``Z ~ GIG(phi, phi, alpha)``.  The joint pmf is available in closed form
through the Bessel function of order ``sum(y) + alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from mpgig_ingarch import gig
from mpgig_ingarch.exceptions import DomainError
from mpgig_ingarch.special_fn import bessel_ratio, log_bessel_k

__all__ = ["MpgigParams", "log_pmf", "log_pmf_rows", "moments", "sample"]


@dataclass(frozen=True)
class MpgigParams:
    lam: np.ndarray
    phi: float
    alpha: float

    def __post_init__(self) -> None:
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if lam.ndim != 1 or lam.size < 1:
            raise DomainError("lambda must be a non-empty vector")
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise DomainError("all lambda entries must be positive and finite")
        if not (np.isfinite(self.phi) and self.phi > 0):
            raise DomainError(f"phi must be positive, got {self.phi}")
        if not np.isfinite(self.alpha):
            raise DomainError("alpha must be finite")
        object.__setattr__(self, "lam", lam)

    @property
    def p(self) -> int:
        return self.lam.size


def _check_counts(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype.kind == "f":
        if np.any(y != np.round(y)):
            raise DomainError("counts must be integers")
    elif y.dtype.kind not in "iu":
        raise DomainError("counts must be integers")
    if np.any(y < 0):
        raise DomainError("counts must be nonnegative")
    return y.astype(float)


def log_pmf_rows(lam: np.ndarray, y: np.ndarray, phi: float, alpha: float) -> np.ndarray:
    """
    Row-wise joint log pmf for rate matrix ``lam`` and counts ``y`` (both n x p).

    Used by the likelihood, where every row has its own rate vector.
    """
    lam = np.atleast_2d(lam)
    y = np.atleast_2d(y).astype(float)
    sy = y.sum(axis=1)
    a = 2.0 * lam.sum(axis=1) + phi
    order = sy + alpha
    return (
        log_bessel_k(order, np.sqrt(phi * a))
        - log_bessel_k(alpha, phi)
        + (y * np.log(lam)).sum(axis=1)
        - gammaln(y + 1.0).sum(axis=1)
        + 0.5 * order * (np.log(phi) - np.log(a))
    )


def log_pmf(params: MpgigParams, y) -> float:
    """Joint log probability of the count vector ``y``."""
    y = _check_counts(y)
    if y.shape != (params.p,):
        raise DomainError(f"expected {params.p} counts, got shape {y.shape}")
    return float(log_pmf_rows(params.lam[None, :], y[None, :], params.phi, params.alpha)[0])


def moments(params: MpgigParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance matrix."""
    r1 = bessel_ratio(params.alpha, 1, params.phi)
    r2 = bessel_ratio(params.alpha, 2, params.phi)
    lam = params.lam
    extra = r2 - r1 * r1
    cov = extra * np.outer(lam, lam)
    cov[np.diag_indices_from(cov)] += lam * r1
    return lam * r1, cov


def sample(
    params: MpgigParams,
    n: int,
    rng: np.random.Generator,
    return_latent: bool = False,
):
    """
    Exact draws through the mixing representation.

    Returns an ``n x p`` integer matrix, plus the latent ``Z`` draws when
    ``return_latent`` is set.
    """
    z = gig.sample(gig.GigParams.symmetric(params.phi, params.alpha), n, rng)
    y = rng.poisson(z[:, None] * params.lam[None, :])
    if return_latent:
        return y, z
    return y
