"""
Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 non-convergence,
5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import urllib.request
from dataclasses import replace
from pathlib import Path

import numpy as np

from mpgig_ingarch import bench, diagnostics
from mpgig_ingarch.bootstrap import parametric_bootstrap
from mpgig_ingarch.em import EXACT, FULL_MC, EmConfig
from mpgig_ingarch.exceptions import DomainError, EstimationError, SimulationError
from mpgig_ingarch.methods import METHODS, fit_series
from mpgig_ingarch.model import (
    DEFAULT_BURN_IN,
    CountSeries,
    ModelShape,
    ModelSpec,
    cond_log_lik,
    simulate,
)
from mpgig_ingarch.parallel import resolve_threads

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4
EXIT_INTERNAL = 5


class CliError(Exception):
    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


def _config_error(msg: str) -> CliError:
    return CliError(f"config error: {msg}", EXIT_CONFIG)


def _data_error(msg: str) -> CliError:
    return CliError(f"data error: {msg}", EXIT_DATA)


def load_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _config_error(f"cannot read {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _config_error(f"{path} line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise _config_error(f"{path}: top level must be an object")
    return cfg


def spec_from_config(cfg: dict) -> ModelSpec:
    """A full ModelSpec; a nested ``"spec"`` block (as written by ``fit``) is accepted."""
    cfg = cfg.get("spec", cfg)
    for key in ("p", "phi", "alpha"):
        if key not in cfg:
            raise _config_error(f"missing field '{key}'")
    try:
        return ModelSpec.from_dict(cfg)
    except DomainError as exc:
        field = next((f for f in ("phi", "alpha", "d") if f in str(exc)), "model")
        raise _config_error(f"field '{field}': {exc}") from exc
    except (TypeError, ValueError, KeyError) as exc:
        raise _config_error(f"invalid model: {exc}") from exc


def shape_from_config(cfg: dict) -> tuple[ModelShape, ModelSpec | None]:
    """Lag structure, plus a starting spec when the parameters are present."""
    cfg = cfg.get("spec", cfg)
    if "p" not in cfg:
        raise _config_error("missing field 'p'")
    try:
        p = int(cfg["p"])
        i1 = tuple(int(v) for v in cfg.get("i1", [int(k) for k in (cfg.get("A") or {})]))
        i2 = tuple(int(v) for v in cfg.get("i2", [int(k) for k in (cfg.get("B") or {})]))
        shape = ModelShape(p, i1, i2, cfg.get("constraint", "full"))
    except (DomainError, TypeError, ValueError) as exc:
        raise _config_error(f"invalid lag structure: {exc}") from exc
    init = spec_from_config(cfg) if "phi" in cfg and "alpha" in cfg else None
    return shape, init


def read_counts(path, columns=None) -> CountSeries:
    """Integer CSV with a header row; ``columns`` selects and orders columns by name."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise _data_error(f"cannot read {path}: {exc.strerror}") from exc
    if len(rows) < 2:
        raise _data_error(f"{path}: need a header and at least one row")
    header = [h.strip() for h in rows[0]]
    idx = list(range(len(header)))
    if columns is not None:
        missing = [c for c in columns if c not in header]
        if missing:
            raise _data_error(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in columns]
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise _data_error(f"{path} line {lineno}: expected {len(header)} fields")
        try:
            data.append([int(row[j]) for j in idx])
        except ValueError as exc:
            raise _data_error(f"{path} line {lineno}: non-integer count") from exc
    try:
        return CountSeries(np.array(data, dtype=np.int64))
    except DomainError as exc:
        raise _data_error(f"{path}: {exc}") from exc


def write_counts(path, y: np.ndarray, z: np.ndarray | None = None) -> None:
    p = y.shape[1]
    header = [f"y{i + 1}" for i in range(p)] + (["z"] if z is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in range(y.shape[0]):
            row = [str(v) for v in y[t]]
            if z is not None:
                row.append(repr(float(z[t])))
            w.writerow(row)


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, allow_nan=True)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _em_config(args) -> EmConfig:
    try:
        return EmConfig(
            m=args.m_draws,
            tol=args.tol,
            max_iter=args.max_iter,
            e_step_mode=FULL_MC if args.e_step == "full_mc" else EXACT,
            seed=args.seed,
        )
    except ValueError as exc:
        raise _config_error(str(exc)) from exc


def cmd_simulate(args) -> int:
    cfg = load_json(args.config)
    spec = spec_from_config(cfg)
    t_len = args.t_len if args.t_len is not None else cfg.get("t_len")
    if t_len is None:
        raise _config_error("missing field 't_len' (or pass --t-len)")
    burn_in = args.burn_in if args.burn_in is not None else cfg.get("burn_in", DEFAULT_BURN_IN)
    try:
        t_len, burn_in = int(t_len), int(burn_in)
        if t_len < 2 or burn_in < 0:
            raise ValueError
    except (TypeError, ValueError) as exc:
        raise _config_error("field 't_len' must be >= 2 and 'burn_in' >= 0") from exc
    rng = np.random.default_rng(args.seed)
    try:
        out = simulate(spec, t_len, burn_in, rng, return_latent=args.latent)
    except SimulationError as exc:
        raise _config_error(f"simulation diverged: {exc}") from exc
    y, z = out if args.latent else (out, None)
    write_counts(args.out, y.data if isinstance(y, CountSeries) else y, z)
    return EXIT_OK


def _fit_payload(res, series: CountSeries, method: str) -> dict:
    spec = res.theta_hat
    n_obs = series.T - spec.shape.max_lag
    aic, bic = diagnostics.information_criteria(res.loglik, spec.shape.n_params, n_obs)
    payload = res.to_dict()
    payload.update(method=method, aic=aic, bic=bic, n_obs=n_obs, n_params=spec.shape.n_params)
    return payload


def cmd_fit(args) -> int:
    cfg = load_json(args.model)
    shape, init = shape_from_config(cfg)
    series = read_counts(args.data, cfg.get("columns"))
    if series.p != shape.p:
        raise _data_error(f"data has {series.p} columns, model expects {shape.p}")
    if series.T <= shape.max_lag + 1:
        raise _data_error(f"series of length {series.T} is too short for lag {shape.max_lag}")
    config = _em_config(args)
    method = args.method
    try:
        res = fit_series(series, shape, method, config, init if method != "h-gmcem" else None)
    except EstimationError as exc:
        raise CliError(f"estimation failed: {exc}", EXIT_CONVERGENCE) from exc
    payload = _fit_payload(res, series, method)
    if not res.converged:
        if args.allow_nonconverged:
            _write_json(args.out, payload)
        raise CliError(
            f"no convergence after {res.iterations} iterations", EXIT_CONVERGENCE
        )
    _write_json(args.out, payload)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    cfg = load_json(args.fit)
    spec = spec_from_config(cfg)
    t_len = args.t_len or cfg.get("n_obs", 0) + spec.shape.max_lag
    if not t_len or t_len < spec.shape.max_lag + 2:
        raise _config_error("missing or too small 't_len' (pass --t-len)")
    try:
        res = parametric_bootstrap(
            spec,
            int(t_len),
            args.method,
            args.reps,
            args.level,
            args.seed,
            replace(_em_config(args), seed=None),
            args.threads,
            args.burn_in if args.burn_in is not None else DEFAULT_BURN_IN,
        )
    except EstimationError as exc:
        raise CliError(str(exc), EXIT_CONVERGENCE) from exc
    except ValueError as exc:
        raise _config_error(str(exc)) from exc
    payload = res.to_dict()
    payload["t_len"] = int(t_len)
    _write_json(args.out, payload)
    return EXIT_OK


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_diagnose(args) -> int:
    spec = spec_from_config(load_json(args.fit))
    series = read_counts(args.data, args.columns.split(",") if args.columns else None)
    if series.p != spec.p:
        raise _data_error(f"data has {series.p} columns, fit expects {spec.p}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    L = spec.shape.max_lag

    hists = diagnostics.pit_histogram(spec, series, args.bins, pooled=True)
    rows = []
    for h in hists:
        label = "pooled" if h.component is None else f"y{h.component + 1}"
        for j, height in enumerate(h.heights):
            rows.append([label, j + 1, j / h.bins, (j + 1) / h.bins, repr(float(height))])
    _write_rows(out / "pit.csv", ["component", "bin", "lo", "hi", "height"], rows)

    resid = diagnostics.pearson_residuals(spec, series)[L:]
    max_lag = min(args.max_lag, resid.shape[0] - 1)
    rows = []
    for kind in ("acf", "pacf"):
        cg = diagnostics.correlogram(resid, max_lag, kind)
        vals = cg.values if cg.values.ndim == 2 else cg.values[:, None]
        for i in range(vals.shape[1]):
            for lag, v in zip(cg.lags, vals[:, i]):
                rows.append([kind, f"y{i + 1}", "", int(lag), repr(float(v)), cg.band])
    for i in range(series.p):
        for j in range(i + 1, series.p):
            cg = diagnostics.correlogram(resid[:, i], max_lag, "ccf", resid[:, j])
            for lag, v in zip(cg.lags, cg.values):
                rows.append(["ccf", f"y{i + 1}", f"y{j + 1}", int(lag), repr(float(v)), cg.band])
    _write_rows(out / "correlogram.csv", ["kind", "series", "with", "lag", "value", "band"], rows)

    summary = {
        "tail_index": {
            f"y{i + 1}": diagnostics.tail_index(series.data[:, i]) for i in range(series.p)
        },
        "pit_chisquare": {
            ("pooled" if h.component is None else f"y{h.component + 1}"): dict(
                zip(("statistic", "p_value"), diagnostics.pit_chisquare(h))
            )
            for h in hists
        },
        "implied_correlation_note": "best-effort reading: time-averaged model-implied contemporaneous correlation",
        "implied_correlation": diagnostics.implied_correlation(spec, series).tolist(),
    }
    table = []
    for name, path in [("fit", args.fit)] + [(Path(c).stem, c) for c in args.candidates or []]:
        cand = spec_from_config(load_json(path))
        if cand.p != series.p:
            raise _config_error(f"candidate {path} has p={cand.p}")
        ll = cond_log_lik(cand, series)
        n_obs = series.T - cand.shape.max_lag
        aic, bic = diagnostics.information_criteria(ll, cand.shape.n_params, n_obs)
        table.append(
            {"model": name, "loglik": ll, "n_params": cand.shape.n_params,
             "n_obs": n_obs, "aic": aic, "bic": bic}
        )
    summary["information_criteria"] = table
    _write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        scheme = bench.get_scheme(args.scheme)
    except KeyError as exc:
        raise _config_error(str(exc.args[0])) from exc
    t_grid = [int(t) for t in args.t_grid.split(",")] if args.t_grid else None
    try:
        res = bench.run_scheme(
            scheme,
            args.method,
            args.seed,
            t_grid,
            args.reps,
            replace(_em_config(args), seed=None),
            args.threads,
            args.burn_in if args.burn_in is not None else DEFAULT_BURN_IN,
        )
    except ValueError as exc:
        raise _config_error(str(exc)) from exc
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    res.write_csv(f"{prefix}.csv")
    res.write_json(f"{prefix}.json")
    return EXIT_OK


def cmd_fetch_data(args) -> int:
    try:
        with urllib.request.urlopen(args.url, timeout=args.timeout) as resp:
            body = resp.read()
    except (OSError, ValueError) as exc:
        raise _data_error(f"download failed: {exc}") from exc
    Path(args.out).write_bytes(body)
    return EXIT_OK


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS, default="gmcem")
    p.add_argument("--m-draws", type=int, default=100, help="posterior draws per time point")
    p.add_argument("--e-step", choices=("exact", "full_mc"), default="exact")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-iter", type=int, default=500)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="defaults to $MPGIG_THREADS or 1")

    parser = argparse.ArgumentParser(prog="mpgig", description=__doc__.splitlines()[1])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a series to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t-len", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--latent", action="store_true", help="append the latent z column")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="fit a model to a CSV series")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--allow-nonconverged", action="store_true")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bootstrap", parents=[common], help="parametric bootstrap of a fit")
    p.add_argument("--fit", required=True, help="fit JSON or model config")
    p.add_argument("--t-len", type=int)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--out", default="-")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("diagnose", parents=[common], help="PIT, correlograms, tail index, AIC/BIC")
    p.add_argument("--data", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--columns")
    p.add_argument("--candidates", nargs="*", help="further fit/model JSON files to compare")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--max-lag", type=int, default=20)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("bench", parents=[common], help="run a simulation scheme")
    p.add_argument("--scheme", required=True, help=", ".join(bench.SCHEMES))
    p.add_argument("--t-grid", help="comma-separated sample sizes")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--out-prefix", required=True)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_bench, method=None)

    p = sub.add_parser("fetch-data", help="download a dataset by explicit URL")
    p.add_argument("--url", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_fetch_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "threads"):
            args.threads = resolve_threads(args.threads)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
