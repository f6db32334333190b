"""
Adequacy and model-selection tools: tail index, Pearson residuals,
correlograms, non-randomized PIT histograms and information criteria.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from statsmodels.tsa import stattools

from mpgig_ingarch.exceptions import DomainError
from mpgig_ingarch.model import CountSeries, ModelSpec, filter_means
from mpgig_ingarch.mpgig import log_pmf_rows
from mpgig_ingarch.special_fn import bessel_ratio

__all__ = [
    "Correlogram",
    "PitHistogram",
    "conditional_moments",
    "correlogram",
    "implied_correlation",
    "information_criteria",
    "pearson_residuals",
    "pit_chisquare",
    "pit_histogram",
    "tail_index",
]


def tail_index(x) -> float:
    """
    Sample skewness minus the negative-binomial benchmark ``(2 s^2 - m) / (m s)``.

    Uses the adjusted Fisher-Pearson skewness and the ``ddof=1`` variance.
    Positive values indicate a heavier right tail than a negative binomial
    with the same mean and variance.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 3:
        raise DomainError("tail_index needs at least 3 observations")
    var = x.var(ddof=1)
    if not var > 0.0:
        raise DomainError("tail_index needs a nonzero variance")
    mean = x.mean()
    sd = np.sqrt(var)
    return float(stats.skew(x, bias=False) - (2.0 * var - mean) / (mean * sd))


def conditional_moments(spec: ModelSpec, series: CountSeries) -> tuple[np.ndarray, np.ndarray]:
    """Conditional means and variances (T x p) implied by the fitted spec."""
    lam = filter_means(spec, series).lam
    r1 = bessel_ratio(spec.alpha, 1, spec.phi)
    r2 = bessel_ratio(spec.alpha, 2, spec.phi)
    return lam * r1, lam * r1 + lam**2 * (r2 - r1 * r1)


def pearson_residuals(spec: ModelSpec, series: CountSeries) -> np.ndarray:
    """
    ``(y - mu) / sqrt(v)`` with the full MPGIG conditional mean and variance.

    The first ``max_lag`` rows use the initial log-mean ``d``; drop them
    before whiteness checks.
    """
    mean, var = conditional_moments(spec, series)
    return (series.data - mean) / np.sqrt(var)


def implied_correlation(spec: ModelSpec, series: CountSeries) -> np.ndarray:
    """
    Model-implied contemporaneous correlation matrix, averaged over ``t >= L``.

    One reading of the single correlation figure reported for a bivariate
    fit; the off-diagonal entry is that number for ``p = 2``.
    """
    L = spec.shape.max_lag
    lam = filter_means(spec, series).lam[L:]
    r1 = bessel_ratio(spec.alpha, 1, spec.phi)
    extra = bessel_ratio(spec.alpha, 2, spec.phi) - r1 * r1
    var = lam * r1 + lam**2 * extra
    cov = extra * lam[:, :, None] * lam[:, None, :]
    corr = cov / np.sqrt(var[:, :, None] * var[:, None, :])
    out = corr.mean(axis=0)
    np.fill_diagonal(out, 1.0)
    return out


@dataclass(frozen=True)
class Correlogram:
    """Values at ``lags`` (one column per series for acf/pacf) and the +-band."""

    kind: str
    lags: np.ndarray
    values: np.ndarray
    band: float


def correlogram(x, max_lag: int, kind: str = "acf", y=None) -> Correlogram:
    """
    Sample ACF, PACF or CCF with the ``1.96 / sqrt(T)`` band.

    Parameters
    ----------
    x : array_like
        A series, or a ``T x p`` matrix for per-column acf/pacf.  For ``ccf``
        either pass ``y`` or a two-column ``x``.
    max_lag : int
    kind : {"acf", "pacf", "ccf"}
    y : array_like, optional
        Second series for ``ccf``.

    Returns
    -------
    Correlogram
        acf/pacf lags run ``0..max_lag``; ccf lags run ``-max_lag..max_lag``
        with value ``corr(x_{t+k}, y_t)`` at lag ``k``.
    """
    x = np.asarray(x, dtype=float)
    T = x.shape[0]
    if not 0 <= max_lag < T:
        raise ValueError("max_lag must lie in [0, T)")
    band = 1.96 / np.sqrt(T)
    if kind == "ccf":
        if y is None:
            if x.ndim != 2 or x.shape[1] != 2:
                raise ValueError("ccf needs two series")
            x, y = x[:, 0], x[:, 1]
        y = np.asarray(y, dtype=float).ravel()
        x = x.ravel()
        pos = stattools.ccf(x, y, adjusted=False, fft=False)[: max_lag + 1]
        neg = stattools.ccf(y, x, adjusted=False, fft=False)[1 : max_lag + 1]
        lags = np.arange(-max_lag, max_lag + 1)
        return Correlogram("ccf", lags, np.concatenate([neg[::-1], pos]), band)
    cols = x[:, None] if x.ndim == 1 else x
    if kind == "acf":
        vals = [stattools.acf(c, nlags=max_lag, fft=False) for c in cols.T]
    elif kind == "pacf":
        vals = [stattools.pacf(c, nlags=max_lag, method="ywadjusted") for c in cols.T]
    else:
        raise ValueError(f"unknown correlogram kind {kind!r}")
    values = np.column_stack(vals)
    return Correlogram(kind, np.arange(max_lag + 1), values[:, 0] if x.ndim == 1 else values, band)


@dataclass(frozen=True)
class PitHistogram:
    """Non-randomized PIT histogram for one component (``None`` when pooled)."""

    bins: int
    heights: np.ndarray
    component: int | None
    n_obs: int
    per_component: bool = True


def _marginal_cdf_pair(lam: np.ndarray, y: np.ndarray, phi: float, alpha: float):
    """``F(y - 1)`` and ``F(y)`` of the univariate Poisson-GIG law, per entry."""
    lo = np.empty(lam.size)
    hi = np.empty(lam.size)
    for j, (rate, obs) in enumerate(zip(lam, y)):
        k = np.arange(int(obs) + 1)
        pmf = np.exp(log_pmf_rows(np.full((k.size, 1), rate), k[:, None], phi, alpha))
        cdf = np.cumsum(pmf)
        hi[j] = min(cdf[-1], 1.0)
        lo[j] = cdf[-2] if obs > 0 else 0.0
    return lo, hi


def _pit_heights(lo: np.ndarray, hi: np.ndarray, bins: int) -> np.ndarray:
    u = np.linspace(0.0, 1.0, bins + 1)
    width = np.where(hi > lo, hi - lo, 1.0)
    frac = np.clip((u[None, :] - lo[:, None]) / width[:, None], 0.0, 1.0)
    frac = np.where(hi[:, None] > lo[:, None], frac, (u[None, :] >= hi[:, None]).astype(float))
    cdf = frac.mean(axis=0)
    cdf[0], cdf[-1] = 0.0, 1.0
    return np.diff(cdf)


def pit_histogram(
    spec: ModelSpec, series: CountSeries, bins: int = 10, pooled: bool = False
) -> list[PitHistogram]:
    """
    Non-randomized PIT histograms under the fitted univariate marginals.

    For each ``t >= L`` and component ``i`` the predictive law is the
    Poisson-GIG with rate ``lambda_it`` and the fitted ``(phi, alpha)``; the
    piecewise-linear PIT distribution functions are averaged over ``t`` and
    differenced on ``bins`` equal bins.

    Returns
    -------
    list of PitHistogram
        One per component, plus a pooled histogram last when ``pooled``.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    L = spec.shape.max_lag
    lam = filter_means(spec, series).lam[L:]
    y = series.data[L:]
    out = []
    los, his = [], []
    for i in range(series.p):
        lo, hi = _marginal_cdf_pair(lam[:, i], y[:, i], spec.phi, spec.alpha)
        los.append(lo)
        his.append(hi)
        out.append(PitHistogram(bins, _pit_heights(lo, hi, bins), i, lo.size))
    if pooled:
        lo, hi = np.concatenate(los), np.concatenate(his)
        out.append(PitHistogram(bins, _pit_heights(lo, hi, bins), None, lo.size, False))
    return out


def pit_chisquare(hist: PitHistogram) -> tuple[float, float]:
    """Chi-square uniformity statistic on ``n_obs * heights`` and its p-value."""
    expected = hist.n_obs / hist.bins
    stat = float(np.sum((hist.n_obs * hist.heights - expected) ** 2) / expected)
    return stat, float(stats.chi2.sf(stat, max(hist.bins - 1, 1)))


def information_criteria(loglik: float, n_params: int, n_obs: int) -> tuple[float, float]:
    """``(AIC, BIC)`` with ``n_obs`` the number of likelihood terms."""
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    return (
        -2.0 * loglik + 2.0 * n_params,
        -2.0 * loglik + n_params * np.log(n_obs),
    )
