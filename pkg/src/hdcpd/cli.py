"""Command-line front end.

Subcommands: ``detect`` (CSV in, JSON report out), ``tune`` (CV table only),
``simulate`` (write a synthetic CSV) and ``benchmark`` (Monte-Carlo table).
Every flag may also come from a ``key=value`` file passed with ``--config``;
flags on the command line win.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .core import ChangePointSet, Dataset, ValidationError, changepoints_to_partition
from .lasso import LassoConfig, penalty_scale
from .simulate import (SimulationConfig, binseg_baseline, generate_simulation,
                       run_benchmark)
from .tuning import (TuningGrid, cross_validate_dp, cross_validate_refined,
                     refit_segments, run_dp_lr_pipeline, run_dp_pipeline, tuned_dp,
                     tuned_dp_lr)

log = logging.getLogger(__name__)

METHODS = ("dp", "dp-lr", "binseg")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_MISSING_COLUMN = 4
EXIT_NO_ROWS = 5
EXIT_ZERO_VARIANCE = 6
EXIT_INVALID = 7


class CliError(Exception):
    code = EXIT_INTERNAL
    kind = "internal"


class MissingFileError(CliError):
    code, kind = EXIT_MISSING_FILE, "missing_file"


class MissingColumnError(CliError):
    code, kind = EXIT_MISSING_COLUMN, "missing_column"


class NoUsableRowsError(CliError):
    code, kind = EXIT_NO_ROWS, "no_usable_rows"


class ZeroVarianceError(CliError):
    code, kind = EXIT_ZERO_VARIANCE, "zero_variance"


class SpecError(CliError):
    code, kind = EXIT_INVALID, "invalid_arguments"


@dataclass
class CsvData:
    dataset: Dataset
    response: str
    covariates: list[str]
    dropped: int
    labels: list[str] | None = None


def _parse_float(cell: str) -> float | None:
    cell = cell.strip()
    if not cell:
        return None
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path, response: str, covariates: list[str] | None = None,
             label_column: str | None = None) -> CsvData:
    """Read a headed CSV; rows with a missing or non-numeric selected cell are dropped."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise NoUsableRowsError(f"{path} is empty") from None
        rows = list(reader)
    wanted = [response] + (covariates or []) + ([label_column] if label_column else [])
    missing = [c for c in wanted if c not in header]
    if missing:
        raise MissingColumnError(f"column(s) not found: {', '.join(missing)}")
    if covariates is None:
        covariates = [h for h in header if h not in (response, label_column)]
    if not covariates:
        raise MissingColumnError("no covariate columns selected")
    idx = {h: i for i, h in enumerate(header)}
    cols = [idx[response]] + [idx[c] for c in covariates]
    values, labels, dropped = [], [], 0
    for row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        parsed = [_parse_float(row[i]) if i < len(row) else None for i in cols]
        if any(v is None for v in parsed):
            dropped += 1
            continue
        values.append(parsed)
        if label_column:
            labels.append(row[idx[label_column]].strip())
    if len(values) < 2:
        raise NoUsableRowsError(f"{len(values)} usable rows in {path}; need at least 2")
    arr = np.asarray(values)
    return CsvData(Dataset(arr[:, 1:], arr[:, 0]), response, list(covariates), dropped,
                   labels if label_column else None)


def standardize_response(data: Dataset) -> tuple[Dataset, float]:
    """Divide y by its sample standard deviation (ddof=1)."""
    sd = float(np.std(data.y, ddof=1))
    if not sd > 0:
        raise ZeroVarianceError("response has zero variance")
    return Dataset(data.X, data.y / sd), sd


def standardize_covariates(data: Dataset) -> Dataset:
    mu = data.X.mean(axis=0)
    sd = data.X.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    return Dataset((data.X - mu) / sd, data.y)


@dataclass
class RunSpec:
    input: str
    response: str
    covariates: list[str] | None = None
    method: str = "dp-lr"
    cv: bool = False
    lam: float | None = None
    gamma: float | None = None
    zeta: float | None = None
    grid: TuningGrid | None = None
    standardize: bool = True
    standardize_covariates: bool = False
    seed: int = 0
    stride: int = 1
    min_seg_len: int = 2
    label_column: str | None = None
    output: str | None = None
    timings: bool = True
    lasso_tol: float = 1e-8
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise SpecError(f"method must be one of {', '.join(METHODS)}")
        if self.cv:
            if self.method == "binseg":
                raise SpecError("cross-validation is available for dp and dp-lr only")
        else:
            need = ["lam", "gamma"] + (["zeta"] if self.method == "dp-lr" else [])
            absent = [n for n in need if getattr(self, n) is None]
            if absent:
                names = ", ".join("--lambda" if n == "lam" else f"--{n}" for n in absent)
                raise SpecError(f"fixed-parameter mode needs {names}")


def _r(v, digits=10):
    if v is None:
        return None
    if isinstance(v, float):
        if not math.isfinite(v):
            return str(v)
        return float(f"{v:.{digits}g}")
    return v


def _segments_report(data: Dataset, cps: ChangePointSet, lam: float, names: list[str],
                     tol: float) -> list[dict]:
    part = changepoints_to_partition(cps, data.n)
    betas = refit_segments(data, part, lambda m: lam * penalty_scale(m, data.n, data.p), tol)
    out = []
    for iv, beta in zip(part, betas):
        support = [int(j) for j in np.flatnonzero(beta)]
        out.append({
            "start": iv.s + 1,
            "end": iv.e,
            "support": [names[j] for j in support],
            "coefficients": {names[j]: _r(float(beta[j])) for j in support},
        })
    return out


def run_pipeline(spec: RunSpec) -> dict:
    t0 = time.perf_counter()
    loaded = load_csv(spec.input, spec.response, spec.covariates, spec.label_column)
    data = loaded.dataset
    scale = 1.0
    if spec.standardize:
        data, scale = standardize_response(data)
    if spec.standardize_covariates:
        data = standardize_covariates(data)

    tuning = {"mode": "cv" if spec.cv else "fixed"}
    prelim = None
    diagnostics: dict = {}
    if spec.cv:
        grid = spec.grid or TuningGrid.default(data.n, data.p, refine=spec.method == "dp-lr")
        if spec.method == "dp-lr" and grid.zetas is None:
            raise SpecError("dp-lr cross-validation needs a zeta grid")
        runner = tuned_dp_lr if spec.method == "dp-lr" else tuned_dp
        res = runner(data, grid, spec.min_seg_len, spec.stride, spec.lasso_tol)
        tuning["best"] = {k: _r(v) for k, v in res.cv.best_params.items()}
        tuning["table"] = [{k: _r(v) for k, v in row.items()} for row in res.cv.rows()]
        params = res.params
    elif spec.method == "binseg":
        cps = binseg_baseline(data, LassoConfig(spec.lam, spec.lasso_tol), spec.gamma,
                              spec.min_seg_len, spec.stride)
        res = None
        params = {"lambda": spec.lam, "gamma": spec.gamma}
    elif spec.method == "dp":
        res = run_dp_pipeline(data, spec.lam, spec.gamma, spec.min_seg_len, spec.stride,
                              spec.lasso_tol)
        params = res.params
    else:
        res = run_dp_lr_pipeline(data, spec.lam, spec.gamma, spec.zeta, spec.min_seg_len,
                                 spec.stride, spec.lasso_tol)
        params = res.params
    if res is not None:
        cps = res.changepoints
        prelim = res.preliminary
        d = res.diagnostics
        diagnostics = {
            "nonconverged_fits": d.get("nonconverged_fits", 0),
            "max_kkt_violation": _r(d.get("max_kkt")),
            "cache": d.get("cache"),
            "refine_flags": d.get("refine_flags", []),
        }
        if spec.timings:
            diagnostics["loss_table_seconds"] = _r(d.get("loss_table_seconds"), 4)

    report = {
        "method": spec.method,
        "input": str(spec.input),
        "response": loaded.response,
        "covariates": loaded.covariates,
        "n": data.n,
        "p": data.p,
        "rows_dropped": loaded.dropped,
        "standardize_response": spec.standardize,
        "response_scale": _r(scale),
        "standardize_covariates": spec.standardize_covariates,
        "seed": spec.seed,
        "stride": spec.stride,
        "min_seg_len": spec.min_seg_len,
        "params": {k: _r(v) for k, v in params.items()},
        "tuning": tuning,
        "k_hat": cps.k_hat,
        "changepoints": cps.as_list(),
        "changepoint_labels": ([loaded.labels[c - 1] for c in cps] if loaded.labels else None),
        "preliminary_changepoints": prelim.as_list() if prelim is not None else None,
        "segments": _segments_report(data, cps, params["lambda"], loaded.covariates,
                                     spec.lasso_tol),
        "diagnostics": diagnostics,
    }
    if spec.standardize_covariates:
        report["notes"] = ["covariates were z-scored; coefficients refer to standardized covariates"]
    if spec.timings:
        report["diagnostics"]["wall_seconds"] = _r(time.perf_counter() - t0, 4)
    return report


# argument handling

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def load_grid(path) -> TuningGrid:
    """Grid file: JSON object or ``key=comma,separated`` lines with
    keys lambdas, gammas and optionally zetas."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"grid file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                k, _, v = line.partition("=")
                obj[k.strip()] = _floats(v)
    try:
        return TuningGrid(obj["lambdas"], obj["gammas"], obj.get("zetas"))
    except KeyError as exc:
        raise SpecError(f"grid file lacks {exc.args[0]}") from None


def read_config(path) -> list[str]:
    """Turn ``key=value`` lines into command-line tokens."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"config file not found: {path}")
    tokens = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().replace("_", "-"), value.strip()
        if not sep:
            tokens.append(f"--{key}")
        elif value.lower() in ("true", "yes", "on"):
            tokens.append(f"--{key}")
        elif value.lower() in ("false", "no", "off"):
            tokens.append(f"--no-{key}")
        else:
            tokens += [f"--{key}", value]
    return tokens


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value file with default flag values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--min-seg-len", type=int, default=2)
    p.add_argument("--lasso-tol", type=float, default=1e-8)
    p.add_argument("--output", help="output path (default: stdout)")
    p.add_argument("-v", "--verbose", action="store_true")


def _input_flags(p: argparse.ArgumentParser):
    p.add_argument("--input", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--covariates", help="comma-separated; default all but response")
    p.add_argument("--label-column", help="column whose values label change points")
    p.add_argument("--method", choices=METHODS, default="dp-lr")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--cv", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--grid-file")
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--standardize-covariates", action=argparse.BooleanOptionalAction,
                   default=False)
    p.add_argument("--timings", action=argparse.BooleanOptionalAction, default=True,
                   help="include wall-clock fields in the report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdcpd", description="Change points in high-dimensional linear regression")
    sub = parser.add_subparsers(dest="command", required=True)

    det = sub.add_parser("detect", help="detect change points in a CSV file")
    _input_flags(det)
    _common(det)

    tune = sub.add_parser("tune", help="cross-validation table only")
    _input_flags(tune)
    _common(tune)

    sim = sub.add_parser("simulate", help="write a synthetic data set as CSV")
    _sim_flags(sim)
    sim.add_argument("--kappa", type=float, default=4.0)
    sim.add_argument("--d0", type=int, default=10)
    sim.add_argument("--truth-output", help="JSON file for the true change points")
    _common(sim)

    bench = sub.add_parser("benchmark", help="Monte-Carlo scaled Hausdorff table")
    _sim_flags(bench)
    bench.add_argument("--kappas", default="4,5,6")
    bench.add_argument("--d0s", default="10")
    bench.add_argument("--reps", type=int, default=5)
    bench.add_argument("--methods", default="dp,dp-lr")
    bench.add_argument("--lambda", dest="lam", type=float)
    bench.add_argument("--gamma", type=float)
    bench.add_argument("--zeta", type=float)
    bench.add_argument("--cv", action=argparse.BooleanOptionalAction, default=True)
    bench.add_argument("--grid-file")
    bench.add_argument("--jobs", type=int, default=1)
    bench.add_argument("--tsv", help="also write the table as tab-separated text")
    _common(bench)
    return parser


def _sim_flags(p):
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--p", type=int, default=200)
    p.add_argument("--change-points", default="121,221,351,451")
    p.add_argument("--sigma-eps", type=float, default=1.0)


def _expand_config(argv: list[str]) -> list[str]:
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    out, cfg = [], None
    it = iter(argv)
    for a in it:
        if a == "--config":
            cfg = next(it, None)
        elif a.startswith("--config="):
            cfg = a.split("=", 1)[1]
        else:
            out.append(a)
    if cfg is None:
        raise SpecError("--config needs a path")
    # subcommand first, then config values, then explicit flags (which win)
    return out[:1] + read_config(cfg) + out[1:]


def _spec_from_args(args) -> RunSpec:
    return RunSpec(
        input=args.input, response=args.response,
        covariates=[c.strip() for c in args.covariates.split(",")] if args.covariates else None,
        method=args.method, cv=args.cv, lam=args.lam, gamma=args.gamma, zeta=args.zeta,
        grid=load_grid(args.grid_file) if args.grid_file else None,
        standardize=args.standardize, standardize_covariates=args.standardize_covariates,
        seed=args.seed, stride=args.stride, min_seg_len=args.min_seg_len,
        label_column=args.label_column, output=args.output, timings=args.timings,
        lasso_tol=args.lasso_tol,
    )


def _emit(text: str, output: str | None):
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def cmd_detect(args) -> int:
    spec = _spec_from_args(args)
    _emit(_dump(run_pipeline(spec)), spec.output)
    return EXIT_OK


def cmd_tune(args) -> int:
    args.cv = True
    spec = _spec_from_args(args)
    if spec.method == "binseg":
        raise SpecError("tune supports dp and dp-lr")
    loaded = load_csv(spec.input, spec.response, spec.covariates, spec.label_column)
    data = loaded.dataset
    if spec.standardize:
        data, _ = standardize_response(data)
    if spec.standardize_covariates:
        data = standardize_covariates(data)
    grid = spec.grid or TuningGrid.default(data.n, data.p, refine=spec.method == "dp-lr")
    if spec.method == "dp-lr":
        cv = cross_validate_refined(data, grid, spec.min_seg_len, spec.stride, spec.lasso_tol)
    else:
        cv = cross_validate_dp(data, grid, spec.min_seg_len, spec.stride, spec.lasso_tol)
    report = {
        "method": spec.method,
        "best": {k: _r(v) for k, v in cv.best_params.items()},
        "table": [{k: _r(v) for k, v in row.items()} for row in cv.rows()],
        "train_changepoints": cv.train_changepoints.as_list(),
    }
    _emit(_dump(report), spec.output)
    return EXIT_OK


def _sim_config(args, kappa, d0) -> SimulationConfig:
    return SimulationConfig(n=args.n, p=args.p, change_points=tuple(_ints(args.change_points)),
                            kappa=kappa, d0=d0, sigma_eps=args.sigma_eps, seed=args.seed)


def cmd_simulate(args) -> int:
    cfg = _sim_config(args, args.kappa, args.d0)
    data, _ = generate_simulation(cfg)
    lines = [",".join(["t", "y"] + [f"x{j + 1}" for j in range(data.p)])]
    for t in range(data.n):
        lines.append(",".join([str(t + 1), repr(float(data.y[t]))]
                              + [repr(float(v)) for v in data.X[t]]))
    _emit("\n".join(lines) + "\n", args.output)
    if args.truth_output:
        Path(args.truth_output).write_text(_dump({
            "n": cfg.n, "p": cfg.p, "change_points": list(cfg.change_points),
            "kappa": cfg.kappa, "d0": cfg.d0, "sigma_eps": cfg.sigma_eps, "seed": cfg.seed,
        }), encoding="utf-8")
    return EXIT_OK


def _bench_dp(data, grid, cv, lam, gamma, min_seg_len, stride, tol):
    if cv:
        return tuned_dp(data, grid or TuningGrid.default(data.n, data.p), min_seg_len,
                        stride, tol).changepoints
    return run_dp_pipeline(data, lam, gamma, min_seg_len, stride, tol).changepoints


def _bench_dp_lr(data, grid, cv, lam, gamma, zeta, min_seg_len, stride, tol):
    if cv:
        return tuned_dp_lr(data, grid or TuningGrid.default(data.n, data.p, refine=True),
                           min_seg_len, stride, tol).changepoints
    return run_dp_lr_pipeline(data, lam, gamma, zeta, min_seg_len, stride, tol).changepoints


def _bench_binseg(data, lam, gamma, min_seg_len, stride, tol):
    return binseg_baseline(data, LassoConfig(lam, tol), gamma, min_seg_len, stride)


def make_methods(names, grid=None, cv=True, lam=None, gamma=None, zeta=None,
                 min_seg_len=10, stride=5, tol=1e-6) -> dict:
    methods = {}
    for name in names:
        if name == "dp":
            methods[name] = partial(_bench_dp, grid=grid, cv=cv, lam=lam, gamma=gamma,
                                    min_seg_len=min_seg_len, stride=stride, tol=tol)
        elif name == "dp-lr":
            if grid is not None and grid.zetas is None and cv:
                raise SpecError("dp-lr benchmarking needs a zeta grid")
            methods[name] = partial(_bench_dp_lr, grid=grid, cv=cv, lam=lam, gamma=gamma,
                                    zeta=zeta, min_seg_len=min_seg_len, stride=stride, tol=tol)
        elif name == "binseg":
            if lam is None or gamma is None:
                raise SpecError("binseg needs --lambda and --gamma")
            methods[name] = partial(_bench_binseg, lam=lam, gamma=gamma,
                                    min_seg_len=min_seg_len, stride=stride, tol=tol)
        else:
            raise SpecError(f"unknown method {name!r}")
        if name != "binseg" and not cv and (lam is None or gamma is None
                                              or (name == "dp-lr" and zeta is None)):
            raise SpecError(f"fixed-parameter {name} needs --lambda, --gamma (and --zeta)")
    return methods


def cmd_benchmark(args) -> int:
    grid = load_grid(args.grid_file) if args.grid_file else None
    settings = [_sim_config(args, k, d) for k in _floats(args.kappas) for d in _ints(args.d0s)]
    methods = make_methods([m.strip() for m in args.methods.split(",")], grid, args.cv,
                           args.lam, args.gamma, args.zeta, args.min_seg_len, args.stride,
                           args.lasso_tol)

    def progress(rec):
        log.info("%s %s rep %d: d=%s K=%s (%.1fs)", rec.setting, rec.method, rec.replicate,
                 rec.hausdorff_scaled, rec.k_hat, rec.seconds)

    table = run_benchmark(settings, methods, args.reps, args.seed, args.jobs, progress)
    _emit(table.to_json() + "\n", args.output)
    if args.tsv:
        Path(args.tsv).write_text(table.to_delimited(), encoding="utf-8")
    elif args.output:
        sys.stderr.write(table.to_delimited())
    return EXIT_OK


COMMANDS = {"detect": cmd_detect, "tune": cmd_tune, "simulate": cmd_simulate,
            "benchmark": cmd_benchmark}


def _fail(exc: Exception, code: int, kind: str) -> int:
    sys.stdout.write(_dump({"error": {"type": kind, "message": str(exc), "exit_status": code}}))
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_config(argv)
    except CliError as exc:
        return _fail(exc, exc.code, exc.kind)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "stride", 1) < 1 or getattr(args, "min_seg_len", 1) < 1:
        return _fail(SpecError("--stride and --min-seg-len must be >= 1"), EXIT_INVALID,
                     "invalid_arguments")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        return _fail(exc, exc.code, exc.kind)
    except ValidationError as exc:
        return _fail(exc, EXIT_INVALID, "validation_error")
    except Exception as exc:  # surfaced as a machine-readable error
        log.exception("unexpected failure")
        return _fail(exc, EXIT_INTERNAL, "internal")


if __name__ == "__main__":
    sys.exit(main())
