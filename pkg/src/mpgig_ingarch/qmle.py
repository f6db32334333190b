"""
Poisson quasi-maximum likelihood for the mean recursion.

The working model treats every component as Poisson with the log-linear mean
and ignores the mixing variable.  Under the MPGIG model the marginal mean is
``lambda_t * R_alpha(phi)``, so the quasi-likelihood estimates the dependence
matrices consistently while the intercept absorbs ``log R``; the intercept of
the working model is written ``d_star``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from mpgig_ingarch.exceptions import EstimationError
from mpgig_ingarch.model import CountSeries, ModelShape, _check, _filter, _sensitivities
from mpgig_ingarch.special_fn import bessel_ratio

__all__ = [
    "QmleResult",
    "d_from_dstar",
    "dstar_from_d",
    "fit_qmle",
    "quasi_log_lik",
    "quasi_score",
]


@dataclass(frozen=True)
class QmleResult:
    shape: ModelShape
    d_star: np.ndarray
    a_mats: tuple[np.ndarray, ...]
    b_mats: tuple[np.ndarray, ...]
    quasi_loglik: float
    converged: bool
    iterations: int = 0
    message: str = ""

    @property
    def theta_star(self) -> np.ndarray:
        return self.shape.pack(self.d_star, self.a_mats, self.b_mats)


def _terms(shape: ModelShape, theta_star: np.ndarray, series: CountSeries):
    logy1 = np.log1p(series.data.astype(float))
    nu = _filter(shape, np.asarray(theta_star, dtype=float), logy1)
    return logy1, nu


def _value(nu: np.ndarray, y: np.ndarray, L: int) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        val = float(np.sum(y[L:] * nu[L:]) - np.sum(np.exp(nu[L:])))
    return val if np.isfinite(val) else -np.inf


def quasi_log_lik(theta_star, series: CountSeries, spec_shape: ModelShape) -> float:
    """
    Poisson quasi-log-likelihood ``sum(-lambda + y log lambda)`` over ``t >= L``.

    The ``-log y!`` constant is dropped.  Only the mean parameters enter;
    ``phi`` and ``alpha`` are not arguments.
    """
    _check(spec_shape, series)
    _, nu = _terms(spec_shape, theta_star, series)
    return _value(nu, series.data.astype(float), spec_shape.max_lag)


def quasi_score(theta_star, series: CountSeries, spec_shape: ModelShape) -> np.ndarray:
    """Gradient ``sum_t J_t^T (y_t - lambda_t)`` of :func:`quasi_log_lik`."""
    _check(spec_shape, series)
    theta_star = np.asarray(theta_star, dtype=float)
    logy1, nu = _terms(spec_shape, theta_star, series)
    L = spec_shape.max_lag
    jac = _sensitivities(spec_shape, theta_star, logy1, nu)[L:]
    resid = series.data[L:] - np.exp(nu[L:])
    return np.einsum("tij,ti->j", jac, resid)


def _ar_radius(shape: ModelShape, a_mats) -> float:
    """Spectral radius of the companion form of the log-mean recursion."""
    if not shape.i1:
        return 0.0
    L, p = max(shape.i1), shape.p
    comp = np.zeros((p * L, p * L))
    for lag, a in zip(shape.i1, a_mats):
        comp[:p, (lag - 1) * p : lag * p] = a
    if L > 1:
        comp[p:, :-p] = np.eye(p * (L - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def _default_starts(series: CountSeries, shape: ModelShape) -> list[np.ndarray]:
    # zero dependence, and a pure feedback start with half the mean in d*
    mean = np.maximum(series.data.mean(axis=0), 1.0 / series.T)
    flat = shape.zeros().theta
    flat[: shape.p] = np.log(mean)
    if not shape.i2:
        return [flat]
    b = [0.5 * np.eye(shape.p) / len(shape.i2)] * len(shape.i2)
    a = [np.zeros((shape.p, shape.p))] * len(shape.i1)
    feedback = shape.pack(0.5 * np.log(mean), a, b)
    return [flat, feedback]


def fit_qmle(
    series: CountSeries,
    spec_shape: ModelShape,
    init=None,
    gtol: float = 1e-8,
    max_iter: int = 2000,
) -> QmleResult:
    """
    Maximize the Poisson quasi-likelihood over ``(d_star, A, B)``.

    The search is confined to lag matrices ``A`` whose companion form has
    spectral radius below one.

    Parameters
    ----------
    series : CountSeries
    spec_shape : ModelShape
        Lag sets and constraint pattern.
    init : array_like, optional
        Starting ``theta_star``.  By default two starts are tried, log sample
        means with zero dependence matrices and a pure-feedback start with
        ``B = I / 2`` split over the lags, and the higher optimum is kept.

    Returns
    -------
    QmleResult
        ``converged`` is false when the optimizer reports failure; the best
        point found is still returned.
    """
    _check(spec_shape, series)
    shape = spec_shape
    y = series.data.astype(float)
    L = shape.max_lag
    logy1 = np.log1p(y)
    if init is None:
        starts = _default_starts(series, shape)
    else:
        starts = [np.asarray(init, dtype=float)]
        if starts[0].shape != (shape.n_theta,):
            raise EstimationError(f"init must have {shape.n_theta} entries", "qmle")

    def obj(theta):
        # outside this region the filter is not invertible and the
        # quasi-likelihood can grow along paths that never excite the
        # explosive mode
        if _ar_radius(shape, shape.unpack(theta)[1]) >= 1.0:
            return np.inf, np.zeros_like(theta)
        nu = _filter(shape, theta, logy1)
        val = _value(nu, y, L)
        if not np.isfinite(val):
            return np.inf, np.zeros_like(theta)
        jac = _sensitivities(shape, theta, logy1, nu)[L:]
        grad = np.einsum("tij,ti->j", jac, y[L:] - np.exp(nu[L:]))
        return -val, -grad

    best = None
    for start in starts:
        with np.errstate(over="ignore", invalid="ignore"):
            res = optimize.minimize(
                obj,
                start,
                jac=True,
                method="BFGS",
                options={"gtol": gtol, "maxiter": max_iter},
            )
        if not np.isfinite(res.fun):
            res.x = start
        if best is None or res.fun < best.fun:
            best = res
    res = best
    d, a_mats, b_mats = shape.unpack(res.x)
    ok = bool(res.success) or (
        np.isfinite(res.fun) and np.max(np.abs(res.jac)) < 1e-4 * max(1.0, abs(res.fun))
    )
    return QmleResult(
        shape=shape,
        d_star=d,
        a_mats=tuple(a_mats),
        b_mats=tuple(b_mats),
        quasi_loglik=-float(res.fun),
        converged=ok,
        iterations=int(res.nit),
        message=str(res.message),
    )


def _shift(a_mats, p: int, phi: float, alpha: float) -> np.ndarray:
    a_sum = np.zeros((p, p))
    for a in a_mats:
        a_sum += np.asarray(a, dtype=float)
    log_r = np.log(bessel_ratio(alpha, 1, phi))
    return log_r * (np.eye(p) - a_sum) @ np.ones(p)


def d_from_dstar(d_star, a_mats, phi: float, alpha: float) -> np.ndarray:
    """
    Recover the MPGIG intercept: ``d = d_star - log R_alpha(phi) (I - sum_j A_j) 1``.
    """
    d_star = np.asarray(d_star, dtype=float)
    return d_star - _shift(a_mats, d_star.size, phi, alpha)


def dstar_from_d(d, a_mats, phi: float, alpha: float) -> np.ndarray:
    """Inverse of :func:`d_from_dstar`."""
    d = np.asarray(d, dtype=float)
    return d + _shift(a_mats, d.size, phi, alpha)
