"""
The MPGIG_p-INGARCH process.

The conditional law is ``Y_t | F_{t-1} ~ MPGIG_p(lambda_t, phi, alpha)`` with a
log-linear mean recursion over arbitrary lag sets::

    nu_t = d + sum_{j in I1} A_(j) nu_{t-j} + sum_{k in I2} B_(k) log(Y_{t-k} + 1)

For ``t`` up to the largest lag the recursion is initialised at ``nu_t = d``.
Constrained matrix entries (diagonal or banded patterns) carry no parameter
coordinate.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from mpgig_ingarch import _kernels, gig
from mpgig_ingarch.exceptions import DomainError, SimulationError
from mpgig_ingarch.mpgig import log_pmf_rows

__all__ = [
    "CountSeries",
    "MeanPath",
    "ModelShape",
    "ModelSpec",
    "StabilityWarning",
    "cond_log_lik",
    "filter_means",
    "mean_sensitivities",
    "simulate",
]

DEFAULT_BURN_IN = 500
_NU_MAX = 700.0


class StabilityWarning(UserWarning):
    """The lag-polynomial companion matrix has spectral radius above one."""


def parse_constraint(constraint: str) -> tuple[str, int]:
    """Return ``(kind, width)`` for ``"full"``, ``"diagonal"`` or ``"band:k"``."""
    if constraint == "full":
        return "full", -1
    if constraint == "diagonal":
        return "band", 0
    m = re.fullmatch(r"band[:(](\d+)\)?", constraint)
    if m:
        return "band", int(m.group(1))
    raise DomainError(f"unknown constraint {constraint!r}; use full, diagonal or band:k")


@dataclass(frozen=True)
class ModelShape:
    """Dimension, lag sets and constraint pattern; everything but the values."""

    p: int
    i1: tuple[int, ...] = (1,)
    i2: tuple[int, ...] = (1,)
    constraint: str = "full"

    def __post_init__(self) -> None:
        if self.p < 1:
            raise DomainError("p must be >= 1")
        for name in ("i1", "i2"):
            lags = tuple(int(v) for v in getattr(self, name))
            if any(v < 1 for v in lags) or len(set(lags)) != len(lags):
                raise DomainError(f"{name} must hold distinct positive lags")
            object.__setattr__(self, name, tuple(sorted(lags)))
        parse_constraint(self.constraint)

    @property
    def max_lag(self) -> int:
        return max(self.i1 + self.i2, default=0)

    @property
    def mask(self) -> np.ndarray:
        kind, width = parse_constraint(self.constraint)
        if kind == "full":
            return np.ones((self.p, self.p), dtype=bool)
        idx = np.arange(self.p)
        return np.abs(idx[:, None] - idx[None, :]) <= width

    @property
    def free_entries(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column indices of free matrix entries, column-major order."""
        cols, rows = np.nonzero(self.mask.T)
        return rows, cols

    @property
    def n_free(self) -> int:
        return int(self.mask.sum())

    @property
    def n_theta(self) -> int:
        return self.p + self.n_free * (len(self.i1) + len(self.i2))

    @property
    def n_params(self) -> int:
        """Free parameters including (phi, alpha)."""
        return self.n_theta + 2

    def theta_names(self) -> list[str]:
        rows, cols = self.free_entries
        names = [f"d[{i + 1}]" for i in range(self.p)]
        for prefix, lags in (("A", self.i1), ("B", self.i2)):
            for lag in lags:
                names += [f"{prefix}{lag}[{r + 1},{c + 1}]" for r, c in zip(rows, cols)]
        return names

    def param_names(self) -> list[str]:
        return ["phi", "alpha"] + self.theta_names()

    def pack(self, d, a_mats, b_mats) -> np.ndarray:
        rows, cols = self.free_entries
        parts = [np.asarray(d, dtype=float)]
        parts += [np.asarray(m, dtype=float)[rows, cols] for m in a_mats]
        parts += [np.asarray(m, dtype=float)[rows, cols] for m in b_mats]
        return np.concatenate(parts)

    def unpack(self, theta) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_theta,):
            raise DomainError(f"theta must have length {self.n_theta}")
        rows, cols = self.free_entries
        k = self.n_free
        d = theta[: self.p].copy()
        mats = []
        pos = self.p
        for _ in range(len(self.i1) + len(self.i2)):
            m = np.zeros((self.p, self.p))
            m[rows, cols] = theta[pos : pos + k]
            mats.append(m)
            pos += k
        return d, mats[: len(self.i1)], mats[len(self.i1) :]

    def spec(self, theta, phi: float, alpha: float) -> "ModelSpec":
        d, a_mats, b_mats = self.unpack(theta)
        return ModelSpec(
            p=self.p, i1=self.i1, i2=self.i2, d=d, a_mats=tuple(a_mats),
            b_mats=tuple(b_mats), phi=phi, alpha=alpha, constraint=self.constraint,
        )

    def zeros(self, phi: float = 1.0, alpha: float = 0.0) -> "ModelSpec":
        return self.spec(np.zeros(self.n_theta), phi, alpha)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full parameter set of the process.  Compare specs through ``big_theta``."""

    p: int
    i1: tuple[int, ...]
    i2: tuple[int, ...]
    d: np.ndarray
    a_mats: tuple[np.ndarray, ...]
    b_mats: tuple[np.ndarray, ...]
    phi: float
    alpha: float
    constraint: str = "full"
    shape: ModelShape = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        shape = ModelShape(self.p, tuple(self.i1), tuple(self.i2), self.constraint)
        object.__setattr__(self, "shape", shape)
        # normalise lag order and array types; matrices follow their lags
        for name, lags, mats in (("i1", self.i1, self.a_mats), ("i2", self.i2, self.b_mats)):
            mats = [np.array(m, dtype=float) for m in mats]
            if len(mats) != len(lags):
                raise DomainError(f"{name}: expected {len(lags)} matrices, got {len(mats)}")
            order = np.argsort(np.asarray(lags, dtype=int), kind="stable")
            mats = tuple(mats[i] for i in order)
            for m in mats:
                if m.shape != (self.p, self.p):
                    raise DomainError(f"coefficient matrices must be {self.p}x{self.p}")
                if np.any(m[~shape.mask] != 0):
                    raise DomainError(
                        f"matrix has nonzero entries outside the {self.constraint} pattern"
                    )
                m.setflags(write=False)
            object.__setattr__(self, name, getattr(shape, name))
            object.__setattr__(self, "a_mats" if name == "i1" else "b_mats", mats)
        d = np.array(self.d, dtype=float).reshape(-1)
        if d.shape != (self.p,):
            raise DomainError(f"d must have length {self.p}")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)
        if not (np.isfinite(self.phi) and self.phi > 0):
            raise DomainError(f"phi must be positive, got {self.phi}")
        if not np.isfinite(self.alpha):
            raise DomainError("alpha must be finite")
        object.__setattr__(self, "phi", float(self.phi))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def theta(self) -> np.ndarray:
        return self.shape.pack(self.d, self.a_mats, self.b_mats)

    @property
    def big_theta(self) -> np.ndarray:
        """(phi, alpha, theta) in natural scale."""
        return np.concatenate([[self.phi, self.alpha], self.theta])

    def with_theta(self, theta) -> "ModelSpec":
        return self.shape.spec(theta, self.phi, self.alpha)

    def with_params(self, **kwargs) -> "ModelSpec":
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "i1": list(self.i1),
            "i2": list(self.i2),
            "constraint": self.constraint,
            "phi": self.phi,
            "alpha": self.alpha,
            "d": self.d.tolist(),
            "A": {str(lag): m.tolist() for lag, m in zip(self.i1, self.a_mats)},
            "B": {str(lag): m.tolist() for lag, m in zip(self.i2, self.b_mats)},
        }

    @classmethod
    def from_dict(cls, cfg: dict) -> "ModelSpec":
        p = int(cfg["p"])
        a_blocks = cfg.get("A", {}) or {}
        b_blocks = cfg.get("B", {}) or {}
        i1 = [int(k) for k in a_blocks] if "i1" not in cfg else [int(v) for v in cfg["i1"]]
        i2 = [int(k) for k in b_blocks] if "i2" not in cfg else [int(v) for v in cfg["i2"]]
        zero = np.zeros((p, p))
        return cls(
            p=p,
            i1=tuple(i1),
            i2=tuple(i2),
            d=cfg.get("d", [0.0] * p),
            a_mats=tuple(a_blocks.get(str(lag), zero) for lag in i1),
            b_mats=tuple(b_blocks.get(str(lag), zero) for lag in i2),
            phi=cfg["phi"],
            alpha=cfg["alpha"],
            constraint=cfg.get("constraint", "full"),
        )

    def named_params(self) -> dict[str, float]:
        return dict(zip(self.shape.param_names(), self.big_theta.tolist()))

    def companion_radius(self) -> float:
        """Spectral radius of the companion form of sum_l (A_(l) + B_(l)) z^l."""
        L = self.shape.max_lag
        if L == 0:
            return 0.0
        coef = [np.zeros((self.p, self.p)) for _ in range(L)]
        for lag, m in zip(self.i1, self.a_mats):
            coef[lag - 1] += m
        for lag, m in zip(self.i2, self.b_mats):
            coef[lag - 1] += m
        comp = np.zeros((self.p * L, self.p * L))
        comp[: self.p, :] = np.hstack(coef)
        if L > 1:
            comp[self.p :, : -self.p] = np.eye(self.p * (L - 1))
        return float(np.max(np.abs(np.linalg.eigvals(comp))))

    def permuted(self, perm: Sequence[int]) -> "ModelSpec":
        """Relabel components: new component ``i`` is old component ``perm[i]``."""
        perm = np.asarray(perm)
        pm = lambda m: m[np.ix_(perm, perm)]  # noqa: E731
        return replace(
            self,
            d=self.d[perm],
            a_mats=tuple(pm(m) for m in self.a_mats),
            b_mats=tuple(pm(m) for m in self.b_mats),
        )


@dataclass(frozen=True)
class CountSeries:
    """T x p matrix of nonnegative integer counts."""

    data: np.ndarray
    t0: str | None = None

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise DomainError("count series must be a T x p matrix")
        if data.dtype.kind == "f":
            if np.any(~np.isfinite(data)) or np.any(data != np.round(data)):
                raise DomainError("counts must be integers")
        elif data.dtype.kind not in "iu":
            raise DomainError("counts must be integers")
        if np.any(data < 0):
            raise DomainError("counts must be nonnegative")
        if data.shape[0] < 2:
            raise DomainError("count series needs T >= 2")
        data = data.astype(np.int64)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class MeanPath:
    nu: np.ndarray
    lam: np.ndarray
    n_init: int


def _check(shape: ModelShape, series: CountSeries) -> None:
    if series.p != shape.p:
        raise DomainError(f"series has {series.p} components, model expects {shape.p}")
    if series.T < shape.max_lag + 2:
        raise DomainError(
            f"series of length {series.T} is too short for maximum lag {shape.max_lag}"
        )


def _forcing(shape, d, b_mats, logy1, T):
    """d + sum_k B_(k) log(y_{t-k} + 1) for every t >= L (rows before L hold d)."""
    L = shape.max_lag
    out = np.tile(d, (T, 1))
    for lag, b in zip(shape.i2, b_mats):
        out[L:] += logy1[L - lag : T - lag] @ b.T
    return out


def _filter(shape: ModelShape, theta: np.ndarray, logy1: np.ndarray) -> np.ndarray:
    d, a_mats, b_mats = shape.unpack(theta)
    T = logy1.shape[0]
    nu = _forcing(shape, d, b_mats, logy1, T)
    if shape.i1:
        with np.errstate(over="ignore", invalid="ignore"):
            _kernels.ar_filter(
                nu, _kernels.stack(a_mats, shape.p), np.asarray(shape.i1), shape.max_lag
            )
    return nu


def filter_means(spec: ModelSpec, series: CountSeries) -> MeanPath:
    """
    Run the log-mean recursion over the observed series.

    Rows ``0..L-1`` (``L`` the largest lag) hold the initial value ``d``; they
    are reported through ``MeanPath.n_init`` and excluded from likelihoods.
    """
    _check(spec.shape, series)
    logy1 = np.log1p(series.data.astype(float))
    nu = _filter(spec.shape, spec.theta, logy1)
    with np.errstate(over="ignore"):
        lam = np.exp(nu)
    return MeanPath(nu=nu, lam=lam, n_init=spec.shape.max_lag)


def _sensitivities(
    shape: ModelShape, theta: np.ndarray, logy1: np.ndarray, nu: np.ndarray, cols=None
):
    """Jacobians d nu_t / d theta, shape (T, p, n_theta), or only columns ``cols``."""
    T, p = nu.shape
    L = shape.max_lag
    _, a_mats, _ = shape.unpack(theta)
    rows, src = shape.free_entries
    k = shape.n_free
    full = np.zeros((T, p, shape.n_theta))
    full[:, np.arange(p), np.arange(p)] = 1.0
    pos = p
    for lag in shape.i1:
        idx = pos + np.arange(k)
        full[L:, rows, idx] = nu[L - lag : T - lag][:, src]
        pos += k
    for lag in shape.i2:
        idx = pos + np.arange(k)
        full[L:, rows, idx] = logy1[L - lag : T - lag][:, src]
        pos += k
    jac = full if cols is None else np.ascontiguousarray(full[:, :, cols])
    if shape.i1:
        _kernels.ar_sensitivities(jac, _kernels.stack(a_mats, p), np.asarray(shape.i1), L)
    return jac


def mean_sensitivities(spec: ModelSpec, series: CountSeries) -> np.ndarray:
    """
    Jacobians of the log-means with respect to the free mean parameters.

    Returns
    -------
    ndarray
        Shape ``(T, p, n_theta)``; entry ``[t, i, j]`` is ``d nu_{t,i} / d theta_j``
        with ``theta`` ordered as ``ModelShape.theta_names()``.
    """
    _check(spec.shape, series)
    logy1 = np.log1p(series.data.astype(float))
    nu = _filter(spec.shape, spec.theta, logy1)
    return _sensitivities(spec.shape, spec.theta, logy1, nu)


def cond_log_lik(spec: ModelSpec, series: CountSeries, per_term: bool = False):
    """
    Conditional log-likelihood, summed over ``t`` after the largest lag.

    The full log pmf is used, including the ``-log y!`` terms, so values are
    comparable across models with different lag sets on the same data only
    when they share the same first usable index.
    """
    path = filter_means(spec, series)
    L = path.n_init
    lam = path.lam[L:]
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        terms = np.full(series.T - L, -np.inf)
    else:
        terms = log_pmf_rows(lam, series.data[L:], spec.phi, spec.alpha)
    return terms if per_term else float(terms.sum())


def simulate(
    spec: ModelSpec,
    t_len: int,
    burn_in: int = DEFAULT_BURN_IN,
    rng: np.random.Generator | None = None,
    return_latent: bool = False,
):
    """
    Simulate a trajectory of length ``t_len`` after ``burn_in`` discarded steps.

    Raises
    ------
    SimulationError
        If the log-mean leaves the representable range; the message names the step.
    """
    if t_len < 2:
        raise ValueError("t_len must be >= 2")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    if rng is None:
        raise ValueError("an explicit numpy Generator is required")
    radius = spec.companion_radius()
    if radius > 1.0:
        warnings.warn(
            f"companion spectral radius {radius:.3f} exceeds 1; the path may explode",
            StabilityWarning,
            stacklevel=2,
        )
    total = burn_in + t_len
    p = spec.p
    L = spec.shape.max_lag
    z = gig.sample(gig.GigParams.symmetric(spec.phi, spec.alpha), total, rng)
    y = np.zeros((total, p), dtype=np.int64)
    logy1 = np.zeros((total, p))
    nu = np.zeros((total, p))
    for t in range(total):
        if t < L:
            cur = spec.d.copy()
        else:
            cur = spec.d.copy()
            for lag, a in zip(spec.i1, spec.a_mats):
                cur += a @ nu[t - lag]
            for lag, b in zip(spec.i2, spec.b_mats):
                cur += b @ logy1[t - lag]
        if not np.all(np.isfinite(cur)) or np.any(cur > _NU_MAX) or np.any(
            cur + np.log(z[t]) > 40.0
        ):
            raise SimulationError(f"log-mean overflow at simulation step {t}")
        nu[t] = cur
        y[t] = rng.poisson(np.exp(cur) * z[t])
        logy1[t] = np.log1p(y[t])
    series = CountSeries(y[burn_in:])
    if return_latent:
        return series, z[burn_in:]
    return series
