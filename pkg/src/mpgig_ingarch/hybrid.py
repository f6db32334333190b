"""
Hybrid estimator: Poisson QMLE for the dependence matrices, then GMCEM for
``(phi, alpha, d)`` with those matrices held fixed.
"""

from __future__ import annotations

import time

import numpy as np

from mpgig_ingarch.em import EmConfig, FitResult, _em_loop
from mpgig_ingarch.exceptions import EstimationError
from mpgig_ingarch.model import CountSeries, ModelShape, _check
from mpgig_ingarch.qmle import QmleResult, d_from_dstar, fit_qmle

__all__ = ["fit_h_gmcem"]


def fit_h_gmcem(
    series: CountSeries,
    spec_shape: ModelShape,
    config: EmConfig | None = None,
    phi0: float = 1.0,
    alpha0: float = 0.0,
) -> tuple[FitResult, QmleResult]:
    """
    Run the hybrid estimator.

    The GMCEM stage starts at ``(phi0, alpha0)`` with ``d`` recovered from the
    QMLE intercept through :func:`~mpgig_ingarch.qmle.d_from_dstar`, and only
    updates ``d`` in its M-step.

    Returns
    -------
    FitResult
        ``stage_times`` holds ``"qmle"`` and ``"gmcem"`` seconds;
        ``wall_time`` is their total.
    QmleResult
        First-stage estimates; its matrices are the ones in the fitted spec.

    Raises
    ------
    EstimationError
        If the QMLE stage fails to produce finite estimates (``stage="qmle"``)
        or the EM stage cannot start (``stage="gmcem"``).
    """
    config = config or EmConfig()
    _check(spec_shape, series)
    t0 = time.perf_counter()
    qres = fit_qmle(series, spec_shape)
    t_qmle = time.perf_counter() - t0
    if not np.all(np.isfinite(qres.theta_star)):
        raise EstimationError("quasi-likelihood estimates are not finite", "qmle")
    t1 = time.perf_counter()
    try:
        d0 = d_from_dstar(qres.d_star, qres.a_mats, phi0, alpha0)
        theta0 = spec_shape.pack(d0, qres.a_mats, qres.b_mats)
        init = spec_shape.spec(theta0, phi0, alpha0)
        res = _em_loop(series, init, config, free=np.arange(spec_shape.p), variant="gmcem")
    except (ValueError, FloatingPointError) as exc:
        raise EstimationError(str(exc), "gmcem") from exc
    t_em = time.perf_counter() - t1
    res.method = "h-gmcem"
    res.stage_times = {"qmle": t_qmle, "gmcem": t_em}
    res.wall_time = t_qmle + t_em
    return res, qres
