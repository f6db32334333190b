"""
Monte Carlo EM estimation (MCEM and GMCEM).

The complete-data log-likelihood separates into a part in ``(phi, alpha)``
and a part in the mean parameters ``theta``.  Each iteration

1. computes posterior expectations of ``Z_t``, ``1/Z_t`` and ``log Z_t``
   (closed form, or Monte Carlo from the GIG posterior),
2. maximizes ``Q1(phi, alpha)`` numerically,
3. either maximizes ``Q2(theta)`` fully (MCEM) or takes one outer-product
   Newton step on it with backtracking (GMCEM).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np
from scipy import optimize

from mpgig_ingarch import gig
from mpgig_ingarch.exceptions import EstimationError
from mpgig_ingarch.model import (
    CountSeries,
    ModelShape,
    ModelSpec,
    _check,
    _filter,
    _sensitivities,
    cond_log_lik,
    filter_means,
)
from mpgig_ingarch.special_fn import bessel_ratio, dlog_bessel_k_dorder, log_bessel_k

__all__ = [
    "EStepStats",
    "EmConfig",
    "FitResult",
    "GemStep",
    "e_step",
    "fit",
    "gem_update",
    "initial_spec",
    "maximize_q1",
    "posterior_gig",
    "q1",
    "q2_and_gradient",
]

EXACT = "exact_zeta_kappa_mc_xi"
FULL_MC = "full_mc"
_RIDGE = 1e-8
_MAX_HALVINGS = 10
_DAMPING = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1e4)


@dataclass(frozen=True)
class EStepStats:
    """Posterior expectations for every likelihood term ``t >= L``."""

    zeta: np.ndarray
    kappa: np.ndarray
    xi: np.ndarray
    method: str = EXACT
    m: int | None = None

    @property
    def n_terms(self) -> int:
        return self.zeta.size


@dataclass(frozen=True)
class EmConfig:
    """
    Settings for the EM loop.

    ``m`` is the number of posterior draws per time point in ``full_mc`` mode,
    multiplied by ``m_growth`` after every iteration.  With ``accelerate``
    each iteration is a squared-extrapolation cycle over two EM updates,
    kept only when it does not lower the observed log-likelihood; without it
    every iteration is a single plain update.  ``expand_scale`` fits a free
    scale for the latent variable in each M-step and folds it back into
    ``d``, which removes most of the slow drift between ``d`` and
    ``(phi, alpha)``.
    """

    variant: Literal["mcem", "gmcem"] = "gmcem"
    m: int = 100
    m_growth: float = 1.0
    tol: float = 1e-3
    max_iter: int = 500
    e_step_mode: Literal["exact_zeta_kappa_mc_xi", "full_mc"] = EXACT
    seed: int | None = 0
    accelerate: bool = True
    expand_scale: bool = True

    def __post_init__(self) -> None:
        if self.variant not in ("mcem", "gmcem"):
            raise ValueError(f"unknown EM variant {self.variant!r}")
        if self.e_step_mode == "exact":
            object.__setattr__(self, "e_step_mode", EXACT)
        if self.e_step_mode not in (EXACT, FULL_MC):
            raise ValueError(f"unknown E-step mode {self.e_step_mode!r}")
        if self.m < 1 or self.tol <= 0 or self.max_iter < 1 or self.m_growth < 1.0:
            raise ValueError("need m >= 1, tol > 0, max_iter >= 1 and m_growth >= 1")


@dataclass
class FitResult:
    theta_hat: ModelSpec
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    wall_time: float
    method: str = "gmcem"
    stage_times: dict[str, float] = field(default_factory=dict)
    n_stalls: int = 0

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1]) if self.loglik_trace.size else float("nan")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "estimates": self.theta_hat.named_params(),
            "spec": self.theta_hat.to_dict(),
            "loglik": self.loglik,
            "loglik_trace": self.loglik_trace.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time": self.wall_time,
            "stage_times": self.stage_times,
            "n_stalls": self.n_stalls,
        }


class GemStep(NamedTuple):
    theta: np.ndarray
    stalled: bool
    halvings: int


def _posterior_terms(spec: ModelSpec, series: CountSeries):
    path = filter_means(spec, series)
    L = path.n_init
    a = 2.0 * path.lam[L:].sum(axis=1) + spec.phi
    order = series.data[L:].sum(axis=1) + spec.alpha
    return a, order


def posterior_gig(spec: ModelSpec, series: CountSeries, t: int) -> gig.GigParams:
    """
    Posterior law of ``Z_t`` given ``Y_t`` and the past, for a 0-based row ``t``.

    It is GIG(2 sum_i lambda_it + phi, phi, sum_i y_it + alpha).
    """
    L = spec.shape.max_lag
    if not L <= t < series.T:
        raise IndexError(f"t must lie in [{L}, {series.T})")
    lam = filter_means(spec, series).lam[t]
    return gig.GigParams(2.0 * lam.sum() + spec.phi, spec.phi, series.data[t].sum() + spec.alpha)


def _exact_stats(a: np.ndarray, order: np.ndarray, phi: float) -> EStepStats:
    w = np.sqrt(phi * a)
    lk = log_bessel_k(order, w)
    log_ratio = 0.5 * (np.log(phi) - np.log(a))
    # inf for extreme trial points; the likelihood safeguard discards those
    with np.errstate(over="ignore"):
        zeta = np.exp(log_ratio + log_bessel_k(order + 1.0, w) - lk)
        kappa = np.exp(-log_ratio + log_bessel_k(order - 1.0, w) - lk)
    xi = dlog_bessel_k_dorder(order, w) + log_ratio
    return EStepStats(np.atleast_1d(zeta), np.atleast_1d(kappa), np.atleast_1d(xi), EXACT)


def e_step(
    spec: ModelSpec,
    series: CountSeries,
    config: EmConfig | None = None,
    rng: np.random.Generator | None = None,
    m: int | None = None,
) -> EStepStats:
    """
    Posterior expectations of ``Z_t``, ``1/Z_t`` and ``log Z_t``.

    In ``full_mc`` mode each time point gets its own random stream derived from
    one draw of ``rng`` and the time index, so the result does not depend on
    evaluation order.
    """
    config = config or EmConfig()
    a, order = _posterior_terms(spec, series)
    if config.e_step_mode == EXACT:
        return _exact_stats(a, order, spec.phi)
    if rng is None:
        raise ValueError("full_mc E-step needs a random stream")
    m = int(m or config.m)
    base = int(rng.integers(2**63))
    zeta = np.empty(a.size)
    kappa = np.empty(a.size)
    xi = np.empty(a.size)
    for i in range(a.size):
        child = np.random.default_rng([base, i])
        z = gig.sample(gig.GigParams(a[i], spec.phi, order[i]), m, child)
        zeta[i] = z.mean()
        kappa[i] = (1.0 / z).mean()
        xi[i] = np.log(z).mean()
    return EStepStats(zeta, kappa, xi, FULL_MC, m)


def q1(phi: float, alpha: float, stats: EStepStats, t_count: int | None = None) -> float:
    """alpha * sum(xi) - n log K_alpha(phi) - phi/2 * sum(zeta + kappa)."""
    n = stats.n_terms if t_count is None else t_count
    return float(
        alpha * stats.xi.sum()
        - n * log_bessel_k(alpha, phi)
        - 0.5 * phi * (stats.zeta.sum() + stats.kappa.sum())
    )


def _q1_grad(phi: float, alpha: float, stats: EStepStats, n: int) -> np.ndarray:
    # d/dx log K_a(x) = -(K_{a-1}(x) + K_{a+1}(x)) / (2 K_a(x))
    dlogk_dx = -0.5 * (bessel_ratio(alpha - 1.0, 1, phi) ** -1 + bessel_ratio(alpha, 1, phi))
    g_phi = -n * dlogk_dx - 0.5 * (stats.zeta.sum() + stats.kappa.sum())
    g_alpha = stats.xi.sum() - n * dlog_bessel_k_dorder(alpha, phi)
    return np.array([g_phi, g_alpha])


def maximize_q1(
    stats: EStepStats,
    t_count: int | None = None,
    start: tuple[float, float] = (1.0, 0.0),
) -> tuple[float, float]:
    """
    Maximize Q1 over ``(phi, alpha)``.

    Quasi-Newton on ``(log phi, alpha)``; the start is returned if the
    optimizer cannot improve on it.
    """
    n = stats.n_terms if t_count is None else t_count
    scale = 1.0 / max(n, 1)

    def obj(x):
        phi, alpha = np.exp(x[0]), x[1]
        try:
            val = q1(phi, alpha, stats, n)
            g = _q1_grad(phi, alpha, stats, n)
        except (ValueError, FloatingPointError):
            return np.inf, np.zeros(2)
        if not np.isfinite(val):
            return np.inf, np.zeros(2)
        return -val * scale, -np.array([g[0] * phi, g[1]]) * scale

    x0 = np.array([np.log(start[0]), start[1]])
    f0 = obj(x0)[0]
    res = optimize.minimize(
        obj,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(np.log(1e-6), np.log(1e6)), (-500.0, 500.0)],
        options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 1000},
    )
    if not np.isfinite(res.fun) or res.fun > f0:
        return float(start[0]), float(start[1])
    return float(np.exp(res.x[0])), float(res.x[1])


def _scale_profile(phi: float, alpha: float, stats: EStepStats, n: int) -> float:
    # root of (phi/2) sum(kappa) s^2 + n alpha s - (phi/2) sum(zeta) = 0
    # NaN at the optimizer's extreme bounds; callers reject it
    sz, sk = stats.zeta.sum(), stats.kappa.sum()
    with np.errstate(all="ignore"):
        root = np.sqrt((n * alpha) ** 2 + phi * phi * sz * sk)
        if alpha >= 0.0:
            return float(np.float64(phi * sz) / (n * alpha + root))
        return float((root - n * alpha) / np.float64(phi * sk))


def _rescaled(stats: EStepStats, s: float) -> EStepStats:
    return EStepStats(stats.zeta / s, stats.kappa * s, stats.xi - np.log(s), stats.method, stats.m)


def maximize_q1_expanded(
    stats: EStepStats,
    t_count: int | None = None,
    start: tuple[float, float] = (1.0, 0.0),
) -> tuple[float, float, float]:
    """
    Maximize Q1 with a free scale on the latent variable.

    The mixing law is widened to ``s * GIG(phi, phi, alpha)``.  The optimal
    ``s`` has a closed form given ``(phi, alpha)``, so the profiled Q1 is
    maximized over ``(log phi, alpha)``; its gradient is the partial gradient
    at the profiled scale.  Returns ``(phi, alpha, s)``.
    """
    n = stats.n_terms if t_count is None else t_count
    scale = 1.0 / max(n, 1)

    def obj(x):
        phi, alpha = np.exp(x[0]), x[1]
        try:
            sc = _scale_profile(phi, alpha, stats, n)
            st = _rescaled(stats, sc)
            val = q1(phi, alpha, st, n)
            g = _q1_grad(phi, alpha, st, n)
        except (ValueError, FloatingPointError, ZeroDivisionError):
            return np.inf, np.zeros(2)
        if not (np.isfinite(val) and sc > 0.0):
            return np.inf, np.zeros(2)
        return -val * scale, -np.array([g[0] * phi, g[1]]) * scale

    x0 = np.array([np.log(start[0]), start[1]])
    f0 = obj(x0)[0]
    res = optimize.minimize(
        obj,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(np.log(1e-6), np.log(1e6)), (-500.0, 500.0)],
        options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 1000},
    )
    x = res.x if np.isfinite(res.fun) and res.fun <= f0 else x0
    phi, alpha = float(np.exp(x[0])), float(x[1])
    return phi, alpha, _scale_profile(phi, alpha, stats, n)


class _Q2Problem:
    """Q2 pieces for a fixed series and E-step, over a subset of theta."""

    def __init__(self, shape: ModelShape, series: CountSeries, zeta: np.ndarray, free=None):
        _check(shape, series)
        self.shape = shape
        self.y = series.data.astype(float)
        self.logy1 = np.log1p(self.y)
        self.L = shape.max_lag
        self.zeta = np.asarray(zeta, dtype=float)
        if self.zeta.size != series.T - self.L:
            raise ValueError("E-step statistics do not match the likelihood range")
        self.free = np.arange(shape.n_theta) if free is None else np.asarray(free)
        self.cols = None if free is None else self.free

    def value(self, theta: np.ndarray) -> float:
        nu = _filter(self.shape, theta, self.logy1)[self.L :]
        if not np.all(np.isfinite(nu)) or np.any(nu > 700.0):
            return -np.inf
        with np.errstate(over="ignore"):
            val = float((self.y[self.L :] * nu).sum() - (self.zeta * np.exp(nu).sum(axis=1)).sum())
        return val if np.isfinite(val) else -np.inf

    def scores(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """Q2 value and per-term scores ``s_t`` (n_terms x n_free)."""
        nu_full = _filter(self.shape, theta, self.logy1)
        nu = nu_full[self.L :]
        if not np.all(np.isfinite(nu)) or np.any(nu > 700.0):
            return -np.inf, np.full((nu.shape[0], self.free.size), np.nan)
        lam = np.exp(nu)
        jac = _sensitivities(self.shape, theta, self.logy1, nu_full, self.cols)[self.L :]
        resid = self.y[self.L :] - self.zeta[:, None] * lam
        value = float((self.y[self.L :] * nu).sum() - (self.zeta * lam.sum(axis=1)).sum())
        return value, np.einsum("tpk,tp->tk", jac, resid)


def q2_and_gradient(
    theta,
    stats: EStepStats,
    series: CountSeries,
    shape: ModelShape,
) -> tuple[float, np.ndarray]:
    """
    Q2 value and its gradient ``S(theta) = sum_t J_t' (y_t - zeta_t lambda_t)``.
    """
    prob = _Q2Problem(shape, series, stats.zeta)
    value, s = prob.scores(np.asarray(theta, dtype=float))
    return value, s.sum(axis=0)


def _newton_ascent_step(grad: np.ndarray, curvature: np.ndarray) -> np.ndarray | None:
    """Solve ``curvature @ step = grad`` for a positive semi-definite curvature."""
    mat = curvature + _RIDGE * np.eye(grad.size)
    try:
        step = np.linalg.solve(mat, grad)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(step)):
        return None
    return step


def _gem_step(prob: _Q2Problem, theta: np.ndarray) -> GemStep:
    value, s = prob.scores(theta)
    if not np.isfinite(value):
        return GemStep(theta, True, 0)
    grad = s.sum(axis=0)
    if not np.any(grad):
        return GemStep(theta, False, 0)
    curvature = s.T @ s
    step = _newton_ascent_step(grad, curvature)
    if step is not None:
        for halvings in range(_MAX_HALVINGS + 1):
            cand = theta.copy()
            cand[prob.free] += step
            if prob.value(cand) >= value:
                return GemStep(cand, False, halvings)
            step = step / 2.0
    # near-collinear scores make the plain step useless; damp toward the gradient
    scale = np.diag(curvature).copy()
    scale[scale <= 0.0] = 1.0
    for mu in _DAMPING:
        step = _newton_ascent_step(grad, curvature + mu * np.diag(scale))
        if step is None:
            continue
        cand = theta.copy()
        cand[prob.free] += step
        if prob.value(cand) >= value:
            return GemStep(cand, False, _MAX_HALVINGS)
    return GemStep(theta, True, _MAX_HALVINGS)


def gem_update(
    theta,
    stats: EStepStats,
    series: CountSeries,
    shape: ModelShape,
    free=None,
) -> GemStep:
    """
    One Newton-type ascent step on Q2.

    The Hessian is replaced by minus the sum of per-term score outer products.
    The step is halved (at most ten times) until Q2 does not decrease.  If
    that fails, Levenberg-Marquardt damping of increasing strength is tried;
    if no damped step ascends either, the input is returned with
    ``stalled=True``.

    Parameters
    ----------
    free : array of int, optional
        Indices of the theta coordinates to update; the rest stay fixed.
    """
    prob = _Q2Problem(shape, series, stats.zeta, free)
    return _gem_step(prob, np.array(theta, dtype=float))


def _maximize_q2(prob: _Q2Problem, theta: np.ndarray) -> np.ndarray:
    base = theta.copy()
    f0 = prob.value(base)
    scale = 1.0 / max(prob.zeta.size, 1)

    def obj(x):
        cand = base.copy()
        cand[prob.free] = x
        value, s = prob.scores(cand)
        if not np.isfinite(value):
            return np.inf, np.zeros(x.size)
        return -value * scale, -s.sum(axis=0) * scale

    res = optimize.minimize(
        obj, base[prob.free], jac=True, method="L-BFGS-B",
        options={"ftol": 1e-14, "gtol": 1e-9, "maxiter": 2000},
    )
    out = base.copy()
    out[prob.free] = res.x
    if not prob.value(out) >= f0:
        return base
    return out


def initial_spec(series: CountSeries, shape: ModelShape) -> ModelSpec:
    """Start at ``(phi, alpha) = (1, 0)``, zero dependence, ``d`` matched to the sample means."""
    phi0, alpha0 = 1.0, 0.0
    mean = np.maximum(series.data.mean(axis=0), 1.0 / series.T)
    d = np.log(mean) - np.log(bessel_ratio(alpha0, 1, phi0))
    theta = np.zeros(shape.n_theta)
    theta[: shape.p] = d
    return shape.spec(theta, phi0, alpha0)


def _to_vec(spec: ModelSpec) -> np.ndarray:
    return np.concatenate([[np.log(spec.phi), spec.alpha], spec.theta])


def _safe_loglik(spec: ModelSpec, series: CountSeries) -> float:
    try:
        with np.errstate(all="ignore"):
            v = cond_log_lik(spec, series)
    except (ValueError, FloatingPointError):
        return -np.inf
    return v if np.isfinite(v) else -np.inf


class _EmMap:
    """One EM update ``spec -> spec'`` with shared RNG and draw schedule."""

    def __init__(self, series, shape, config, free, variant):
        self.series = series
        self.shape = shape
        self.config = config
        self.free = free
        self.variant = variant
        self.rng = np.random.default_rng(config.seed)
        self.n = series.T - shape.max_lag
        self.m = float(config.m)
        self.stalls = 0
        d_idx = np.arange(shape.p)
        self.d_free = free is None or np.all(np.isin(d_idx, free))

    def __call__(self, spec: ModelSpec) -> ModelSpec:
        stats = e_step(spec, self.series, self.config, self.rng, m=int(round(self.m)))
        self.m *= self.config.m_growth
        prob = _Q2Problem(self.shape, self.series, stats.zeta, self.free)
        if self.variant == "mcem":
            theta = _maximize_q2(prob, spec.theta)
        else:
            step = _gem_step(prob, spec.theta)
            theta = step.theta
            self.stalls += int(step.stalled)
        phi, alpha = maximize_q1(stats, self.n, (spec.phi, spec.alpha))
        plain = self.shape.spec(theta, phi, alpha)
        if not (self.config.expand_scale and self.d_free):
            return plain
        phi_e, alpha_e, s = maximize_q1_expanded(stats, self.n, (phi, alpha))
        d, a_mats, _ = self.shape.unpack(theta)
        a_sum = sum(a_mats, np.zeros((self.shape.p, self.shape.p)))
        theta_e = theta.copy()
        theta_e[: self.shape.p] = d + np.log(s) * (np.eye(self.shape.p) - a_sum).sum(axis=1)
        expanded = self.shape.spec(theta_e, phi_e, alpha_e)
        # the fixed initial segment makes the fold-back inexact; keep the better one
        if _safe_loglik(expanded, self.series) >= _safe_loglik(plain, self.series):
            return expanded
        return plain

    def from_vec(self, x: np.ndarray) -> ModelSpec | None:
        if not np.all(np.isfinite(x)) or abs(x[0]) > 700:
            return None
        return self.shape.spec(x[2:], float(np.exp(x[0])), float(x[1]))


def _squarem_cycle(em: _EmMap, spec: ModelSpec, ll: float, state: dict):
    # squared extrapolation over two EM updates, safeguarded by the likelihood
    s1 = em(spec)
    s2 = em(s1)
    ll2 = _safe_loglik(s2, em.series)
    x0, x1, x2 = _to_vec(spec), _to_vec(s1), _to_vec(s2)
    r = x1 - x0
    v = x2 - x1 - r
    nv = np.linalg.norm(v)
    if nv == 0.0 or not np.isfinite(nv):
        return s2, ll2
    step = -min(max(np.linalg.norm(r) / nv, 1.0), state["max_step"])
    if step == -1.0:
        return s2, ll2
    cand = em.from_vec(x0 - 2.0 * step * r + step * step * v)
    if cand is not None and _safe_loglik(cand, em.series) > -np.inf:
        cand = em(cand)
        ll3 = _safe_loglik(cand, em.series)
        if ll3 >= max(ll2, ll):
            if -step >= state["max_step"]:
                state["max_step"] *= 4.0
            return cand, ll3
    state["max_step"] = max(1.0, state["max_step"] / 4.0)
    return s2, ll2


def _em_loop(
    series: CountSeries,
    init: ModelSpec,
    config: EmConfig,
    free=None,
    variant: str | None = None,
) -> FitResult:
    variant = variant or config.variant
    shape = init.shape
    _check(shape, series)
    em = _EmMap(series, shape, config, free, variant)
    spec = init
    ll = _safe_loglik(spec, series)
    state = {"max_step": 4.0}
    # extrapolated steps zigzag, so one short step is not enough evidence
    patience = 3 if config.accelerate else 1
    quiet = 0
    trace: list[float] = []
    converged = False
    start = time.perf_counter()
    it = 0
    for it in range(1, config.max_iter + 1):
        stalls_before = em.stalls
        if config.accelerate:
            new, ll_new = _squarem_cycle(em, spec, ll, state)
        else:
            new = em(spec)
            ll_new = _safe_loglik(new, series)
        trace.append(ll_new)
        delta = np.max(np.abs(new.big_theta - spec.big_theta))
        spec, ll = new, ll_new
        stalled = em.stalls > stalls_before
        quiet = quiet + 1 if delta < config.tol and not stalled else 0
        if quiet >= patience:
            converged = True
            break
    return FitResult(
        theta_hat=spec,
        loglik_trace=np.asarray(trace),
        iterations=it,
        converged=converged,
        wall_time=time.perf_counter() - start,
        method=variant,
        n_stalls=em.stalls,
    )


def fit(
    series: CountSeries,
    shape: ModelShape,
    config: EmConfig | None = None,
    init: ModelSpec | None = None,
) -> FitResult:
    """
    Estimate all parameters with MCEM or GMCEM.

    Non-convergence within ``max_iter`` is reported through
    ``FitResult.converged`` rather than raised.
    """
    config = config or EmConfig()
    if init is None:
        init = initial_spec(series, shape)
    elif init.shape != shape:
        raise EstimationError("initial spec does not match the requested shape", "init")
    t0 = time.perf_counter()
    res = _em_loop(series, init, config)
    res.wall_time = time.perf_counter() - t0
    res.stage_times = {"em": res.wall_time}
    return res
