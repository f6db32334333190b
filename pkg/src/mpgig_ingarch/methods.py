"""Name-based dispatch over the three estimators."""

from __future__ import annotations

from dataclasses import replace

from mpgig_ingarch.em import EmConfig, FitResult, fit
from mpgig_ingarch.hybrid import fit_h_gmcem
from mpgig_ingarch.model import CountSeries, ModelShape, ModelSpec

METHODS = ("mcem", "gmcem", "h-gmcem")


def normalize_method(method: str) -> str:
    name = method.lower().replace("_", "-")
    if name not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    return name


def fit_series(
    series: CountSeries,
    shape: ModelShape,
    method: str = "gmcem",
    config: EmConfig | None = None,
    init: ModelSpec | None = None,
) -> FitResult:
    """Fit with ``mcem``, ``gmcem`` or ``h-gmcem`` (``h_gmcem`` also accepted)."""
    method = normalize_method(method)
    config = config or EmConfig()
    if method == "h-gmcem":
        return fit_h_gmcem(series, shape, config)[0]
    return fit(series, shape, replace(config, variant=method), init)
