"""
Parametric bootstrap for any of the estimators.

Every replicate simulates a fresh series of the original length from the
fitted parameters and refits it.  Replicate ``r`` uses a seed split from the
master seed, so results do not depend on the number of workers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import partial

import numpy as np

from mpgig_ingarch.em import EmConfig
from mpgig_ingarch.exceptions import EstimationError, SimulationError
from mpgig_ingarch.methods import fit_series, normalize_method
from mpgig_ingarch.model import DEFAULT_BURN_IN, ModelSpec, simulate
from mpgig_ingarch.parallel import child_seeds, map_ordered

__all__ = ["BootstrapResult", "parametric_bootstrap"]


@dataclass(frozen=True)
class BootstrapResult:
    """
    Replicate estimates and their summaries.

    ``estimates`` has one row per replicate in the order of
    ``ModelShape.param_names()``; rows of failed replicates are NaN and are
    excluded from ``standard_errors`` and ``ci`` through ``converged``.
    """

    names: tuple[str, ...]
    point: np.ndarray
    estimates: np.ndarray
    converged: np.ndarray
    standard_errors: np.ndarray
    ci: np.ndarray
    level: float
    n_failed: int
    seed: int | None
    method: str

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "level": self.level,
            "b_reps": int(self.estimates.shape[0]),
            "n_failed": self.n_failed,
            "parameters": [
                {
                    "name": n,
                    "estimate": float(self.point[j]),
                    "se": float(self.standard_errors[j]),
                    "ci_lo": float(self.ci[j, 0]),
                    "ci_hi": float(self.ci[j, 1]),
                }
                for j, n in enumerate(self.names)
            ],
        }


def _replicate(task, spec: ModelSpec, t_len: int, method: str, config: EmConfig, burn_in: int):
    sim_seed, fit_seed = task
    dim = spec.shape.n_params
    try:
        series = simulate(spec, t_len, burn_in, np.random.default_rng(sim_seed))
        res = fit_series(series, spec.shape, method, replace(config, seed=fit_seed))
    except (SimulationError, EstimationError, ValueError, FloatingPointError):
        return np.full(dim, np.nan), False
    return res.theta_hat.big_theta, bool(res.converged)


def parametric_bootstrap(
    theta_hat: ModelSpec,
    t_len: int,
    fit_method: str = "gmcem",
    b_reps: int = 200,
    level: float = 0.95,
    seed: int | None = 0,
    config: EmConfig | None = None,
    threads: int | None = None,
    burn_in: int = DEFAULT_BURN_IN,
) -> BootstrapResult:
    """
    Bootstrap standard errors and percentile intervals.

    Parameters
    ----------
    theta_hat : ModelSpec
        Fitted parameters to simulate from.
    t_len : int
        Length of every simulated series, normally the original sample size.
    fit_method : {"mcem", "gmcem", "h-gmcem"}
    b_reps : int
        Number of replicates, at least 2.
    level : float
        Coverage of the percentile intervals.
    seed : int, optional
        Master seed; replicate seeds are split from it.
    threads : int, optional
        Worker processes; defaults to ``MPGIG_THREADS`` or 1.

    Returns
    -------
    BootstrapResult

    Raises
    ------
    EstimationError
        If no replicate converges.
    """
    if b_reps < 2:
        raise ValueError("b_reps must be >= 2")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    method = normalize_method(fit_method)
    config = config or EmConfig()
    seeds = child_seeds(seed, 2 * b_reps)
    tasks = list(zip(seeds[:b_reps], seeds[b_reps:]))
    work = partial(
        _replicate, spec=theta_hat, t_len=t_len, method=method, config=config, burn_in=burn_in
    )
    out = map_ordered(work, tasks, threads)
    est = np.vstack([row for row, _ in out])
    ok = np.array([flag for _, flag in out]) & np.all(np.isfinite(est), axis=1)
    n_ok = int(ok.sum())
    if n_ok == 0:
        raise EstimationError("no bootstrap replicate converged", "bootstrap")
    good = est[ok]
    se = good.std(axis=0, ddof=1) if n_ok > 1 else np.full(est.shape[1], np.nan)
    tail = (1.0 - level) / 2.0
    ci = np.quantile(good, [tail, 1.0 - tail], axis=0).T
    return BootstrapResult(
        names=tuple(theta_hat.shape.param_names()),
        point=theta_hat.big_theta,
        estimates=est,
        converged=ok,
        standard_errors=se,
        ci=ci,
        level=level,
        n_failed=b_reps - n_ok,
        seed=seed,
        method=method,
    )
