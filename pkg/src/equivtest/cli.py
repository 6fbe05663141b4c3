"""Command-line interface: ``equivtest {critical,test,power,simulate,replay}``.

Each command first resolves its arguments into a plain configuration dict, then
runs from that dict alone. The dict is echoed in JSON output and stored in the
RunRecord sidecar, and ``equivtest replay RECORD`` reruns it, reproducing the
report byte for byte.

Exit codes: 0 success, 2 usage or validation error, 3 degenerate data,
1 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .critical import (
    EquivalenceSpec,
    critical_constant,
    exact_power,
    onesided_local_power,
    small_margin_limit,
    tost_limit_power,
)
from .distfn import norm_quantile
from .errors import DegenerateDataError, DomainError, SingularMatrixError
from .models import BernoulliModel, NormalModel, TwoSampleNormalModel, functional_sd, make_model
from .montecarlo import PROCEDURES, SimConfig, boundary_size_sweep, compare_procedures, power_curve
from .procedures import plugin_test, tost, ump_known_sigma, ump_linear_gaussian

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_DEGENERATE = 0, 1, 2, 3
SIG_DIGITS = 12

SIM_COLUMNS = (
    "procedure",
    "grid_value",
    "theta",
    "n",
    "replications",
    "n_reject",
    "n_accept",
    "n_error",
    "rejection_rate",
    "mc_standard_error",
    "ci95_low",
    "ci95_high",
    "reference_value",
    "reference_source",
    "z_discrepancy",
)
POWER_COLUMNS = ("delta_prime_or_h", "analytic_power_or_bound", "source")


class UsageError(Exception):
    """Bad flags or configuration; reported with exit code 2."""


# ---------------------------------------------------------------- formatting


def _clean(obj):
    """Round floats to 12 significant digits; non-finite floats become null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(f"{x:.{SIG_DIGITS}g}") if math.isfinite(x) else None
    return obj


def _cell(value) -> str:
    value = _clean(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.{SIG_DIGITS}g}"
    if isinstance(value, list):
        return " ".join(_cell(v) for v in value)
    return str(value)


def _to_json(doc: dict) -> str:
    return json.dumps(_clean(doc), indent=2) + "\n"


def _to_csv(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _parse_floats(text: str, name: str) -> list[float]:
    try:
        return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None


def _parse_matrix(text: str, name: str) -> list[list[float]]:
    rows = [_parse_floats(r, name) for r in str(text).split(";") if r.strip()]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise UsageError(f"{name}: expected rows separated by ';', all of equal length")
    return rows


def _load_data(path: str) -> np.ndarray:
    """One observation per line, comma-separated columns, '#' comments."""
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read data file {path!r}: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"cannot parse data file {path!r}: {exc}") from None
    if data.size == 0:
        raise UsageError(f"data file {path!r} has no observations")
    return data


def _centered(args) -> tuple[float, float]:
    """Map ``--delta`` or ``--lower/--upper`` to (center, half-width)."""
    if args.delta is not None:
        if args.lower is not None or args.upper is not None:
            raise UsageError("give either --delta or --lower/--upper, not both")
        return 0.0, args.delta
    if args.lower is None or args.upper is None:
        raise UsageError("a margin is required: --delta, or both --lower and --upper")
    if not args.lower < args.upper:
        raise UsageError(f"need --lower < --upper, got {args.lower} and {args.upper}")
    return 0.5 * (args.lower + args.upper), 0.5 * (args.upper - args.lower)


# ------------------------------------------------------------------ critical


def resolve_critical(args) -> dict:
    return {"alpha": args.alpha, "delta": args.delta, "sigma": args.sigma}


def run_critical(cfg: dict) -> tuple[dict, list[str], list[dict]]:
    spec = EquivalenceSpec(cfg["alpha"], cfg["delta"], cfg["sigma"])
    cc = critical_constant(spec)
    result = {
        "c": cc.c,
        "residual": cc.residual,
        "lower_bound": spec.delta - spec.sigma * norm_quantile(1.0 - spec.alpha),
        "excess_over_lower_bound": cc.excess,
        "small_margin_limit": spec.sigma * small_margin_limit(spec.alpha),
        "iterations": cc.iterations,
    }
    return result, list(result), [result]


# ---------------------------------------------------------------------- test


def resolve_test(args) -> dict:
    center, half = _centered(args)
    path = Path(args.data).resolve()
    try:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError as exc:
        raise UsageError(f"cannot read data file {args.data!r}: {exc}") from None
    cfg = {
        "method": args.method,
        "data": str(path),
        "data_sha256": digest,
        "alpha": args.alpha,
        "delta": half,
        "center": center,
    }
    if args.method == "ump":
        if args.sigma is None and args.Sigma is None:
            raise UsageError("ump needs the known scale: --sigma, or --a with --Sigma")
        if args.a is not None:
            if args.Sigma is None:
                raise UsageError("--a needs --Sigma")
            cfg["a"] = _parse_floats(args.a, "--a")
            cfg["Sigma"] = _parse_matrix(args.Sigma, "--Sigma")
        else:
            cfg["sigma"] = args.sigma
    elif args.method == "plugin":
        cfg["model"] = args.model
        if args.model == "bernoulli":
            cfg["reference"] = args.reference
        if args.sigma_hat is not None:
            cfg["sigma_hat"] = args.sigma_hat
    return cfg


def run_test(cfg: dict) -> tuple[dict, list[str], list[dict]]:
    try:
        digest = hashlib.sha256(Path(cfg["data"]).read_bytes()).hexdigest()
    except OSError as exc:
        raise UsageError(f"cannot read data file {cfg['data']!r}: {exc}") from None
    if digest != cfg["data_sha256"]:
        raise UsageError(f"data file {cfg['data']!r} changed since the run was recorded")
    data = _load_data(cfg["data"])
    method, alpha, Delta, center = cfg["method"], cfg["alpha"], cfg["delta"], cfg["center"]
    if method in ("ump", "tost") and "a" not in cfg:
        if data.shape[1] != 1:
            raise UsageError(f"{method} expects a single numeric column, got {data.shape[1]}")
        x = data[:, 0] - center
        if method == "tost":
            decision = tost(x, alpha, Delta)
        else:
            decision = ump_known_sigma(x, cfg["sigma"], alpha, Delta)
    elif method == "ump":
        a = np.asarray(cfg["a"])
        if data.shape[1] != a.size:
            raise UsageError(f"data have {data.shape[1]} columns but --a has {a.size} entries")
        n = data.shape[0]
        # a' xbar ~ N(a' mu, a' Sigma a / n); re-centering shifts a' xbar
        xbar = data.mean(axis=0) - center * a / float(a @ a)
        decision = ump_linear_gaussian(xbar, a, np.asarray(cfg["Sigma"]) / n, alpha, Delta)
    else:
        model_name = cfg["model"]
        if model_name == "normal":
            if data.shape[1] != 1:
                raise UsageError("the normal model expects a single numeric column")
            model, obs = NormalModel(), data[:, 0]
        elif model_name == "bernoulli":
            if data.shape[1] != 1:
                raise UsageError("the bernoulli model expects a single 0/1 column")
            model, obs = BernoulliModel(cfg["reference"]), data[:, 0]
        else:
            if data.shape[1] != 2:
                raise UsageError("the two-sample model expects group,value rows")
            ones = np.count_nonzero(data[:, 0] == 1.0)
            if ones == 0 or ones == data.shape[0]:
                raise DegenerateDataError("two-sample model: both groups need at least one observation")
            # the observed allocation fraction estimates the group probability
            model, obs = TwoSampleNormalModel(ones / data.shape[0]), data
        g = model.default_functional().shifted(center)
        n = len(model.check_data(obs))
        decision = plugin_test(model, g, obs, alpha, math.sqrt(n) * Delta, sigma_hat=cfg.get("sigma_hat"))
    result = decision.to_dict()
    columns = [c for c in result if c != "diagnostics"] + ["diagnostics"]
    row = dict(result, diagnostics="; ".join(result["diagnostics"]))
    return result, columns, [row]


# --------------------------------------------------------------------- power


def resolve_power(args) -> dict:
    grid = _parse_floats(args.grid, "--grid")
    if not grid:
        raise UsageError("--grid is empty")
    if any(v < 0.0 for v in grid):
        raise UsageError("--grid values must be >= 0")
    cfg = {"method": args.method, "alpha": args.alpha, "delta": args.delta, "grid": grid}
    if args.model is not None:
        if args.theta is None:
            raise UsageError("--model needs --theta (the base point theta0)")
        cfg["model"] = args.model
        cfg["theta"] = _parse_floats(args.theta, "--theta")
        cfg["model_options"] = _model_options(args.allocation, args.reference, args.Sigma, args.a)
    else:
        cfg["sigma"] = args.sigma
    return cfg


def _model_options(allocation, reference, Sigma, a) -> dict:
    opts: dict[str, Any] = {}
    if allocation is not None:
        opts["allocation"] = float(allocation)
    if reference is not None:
        opts["reference"] = float(reference)
    if Sigma is not None:
        opts["Sigma"] = Sigma if isinstance(Sigma, list) else _parse_matrix(Sigma, "Sigma")
    if a is not None:
        opts["a"] = a if isinstance(a, list) else _parse_floats(a, "a")
    return opts


def run_power(cfg: dict) -> tuple[dict, list[str], list[dict]]:
    alpha, delta = cfg["alpha"], cfg["delta"]
    if "model" in cfg:
        model = make_model(cfg["model"], **cfg["model_options"])
        g = model.default_functional()
        theta0 = model.check_theta(cfg["theta"])
        if abs(g(theta0)) > 1e-9:
            raise DomainError(f"theta0 must satisfy g(theta0) = 0, got g = {g(theta0)!r}")
        sigma = functional_sd(model, g, theta0)
    else:
        sigma = cfg["sigma"]
    spec = EquivalenceSpec(alpha, delta, sigma)
    method = cfg["method"]
    rows = []
    for v in cfg["grid"]:
        if method == "ump":
            value, source = exact_power(v, spec), "EXACT_POWER"
        elif method == "plugin":
            if not v < delta:
                raise DomainError(f"the local power bound needs delta' < delta, got {v} >= {delta}")
            value, source = exact_power(v, spec), "BOUND_EQ9"
        elif method == "tost":
            value, source = tost_limit_power(v, alpha, delta, sigma), "TOST_LIMIT_EQ15"
        else:
            value, source = onesided_local_power(v, alpha, sigma), "ONESIDED_BOUND"
        rows.append({"delta_prime_or_h": v, "analytic_power_or_bound": value, "source": source})
    return {"sigma": sigma, "rows": rows}, list(POWER_COLUMNS), rows


# ------------------------------------------------------------------ simulate

_SIM_KEYS = {
    "procedures",
    "model",
    "theta",
    "n",
    "replications",
    "seed",
    "alpha",
    "delta",
    "shift",
    "h",
    "grid",
    "boundary",
    "sigma_estimator",
    "reference",
    "workers",
}
_MODEL_KEYS = {"allocation", "reference", "sigma", "a"}  # configparser lower-cases keys


def _read_sim_config(path: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path!r}: {exc}") from None
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path!r}: {exc}") from None
    if not parser.has_section("simulation"):
        raise UsageError("config needs a [simulation] section")
    unknown_sections = set(parser.sections()) - {"simulation", "model"}
    if unknown_sections:
        raise UsageError(f"unknown config sections: {sorted(unknown_sections)}")
    sim = dict(parser["simulation"])
    extra = set(sim) - _SIM_KEYS
    if extra:
        raise UsageError(f"unknown keys in [simulation]: {sorted(extra)}")
    model = dict(parser["model"]) if parser.has_section("model") else {}
    extra = set(model) - _MODEL_KEYS
    if extra:
        raise UsageError(f"unknown keys in [model]: {sorted(extra)}")
    return {"simulation": sim, "model": model}


def _number(text, name, kind=float):
    try:
        value = kind(text)
    except (TypeError, ValueError):
        raise UsageError(f"{name}: expected a number, got {text!r}") from None
    return value


def resolve_simulate(args) -> dict:
    raw = _read_sim_config(args.config)
    sim, model = raw["simulation"], raw["model"]
    seed = args.seed if args.seed is not None else sim.get("seed")
    if seed is None:
        raise UsageError("a master seed is required: set seed in the config or pass --seed")
    procedures = [p.strip() for p in sim.get("procedures", "").split(",") if p.strip()]
    if not procedures:
        raise UsageError("config must list at least one procedure")
    bad = [p for p in procedures if p not in PROCEDURES]
    if bad:
        raise UsageError(f"unknown procedures {bad}; choose from {list(PROCEDURES)}")
    if "grid" in sim and "boundary" in sim:
        raise UsageError("give either grid or boundary, not both")
    cfg = {
        "procedures": procedures,
        "model": sim.get("model", "normal"),
        "theta": _parse_floats(sim.get("theta", "0, 1"), "theta"),
        "n": _number(sim.get("n", 100), "n", int),
        "replications": _number(sim.get("replications", 10000), "replications", int),
        "seed": _number(seed, "seed", int),
        "alpha": _number(sim.get("alpha", 0.05), "alpha"),
        "delta": _number(sim.get("delta", 1.0), "delta"),
        "shift": _number(sim.get("shift", 0.0), "shift"),
        "h": _parse_floats(sim["h"], "h") if "h" in sim else None,
        "grid": _parse_floats(sim["grid"], "grid") if "grid" in sim else None,
        "boundary": _parse_matrix(sim["boundary"], "boundary") if "boundary" in sim else None,
        "sigma_estimator": sim.get("sigma_estimator", "mle"),
        "reference": sim.get("reference", "auto"),
        "workers": _number(sim.get("workers", 1), "workers", int),
        "model_options": _model_options(model.get("allocation"), model.get("reference"), model.get("sigma"), model.get("a")),
    }
    if cfg["grid"] is not None and not cfg["grid"]:
        raise UsageError("grid is empty")
    if cfg["workers"] < 1:
        raise UsageError("workers must be >= 1")
    return cfg


def run_simulate(cfg: dict) -> tuple[dict, list[str], list[dict]]:
    config = SimConfig(
        procedure=cfg["procedures"][0],
        model=cfg["model"],
        theta=tuple(cfg["theta"]),
        n=cfg["n"],
        replications=cfg["replications"],
        seed=cfg["seed"],
        alpha=cfg["alpha"],
        delta=cfg["delta"],
        shift=cfg["shift"],
        h=None if cfg["h"] is None else tuple(cfg["h"]),
        sigma_estimator=cfg["sigma_estimator"],
        reference=cfg["reference"],
        model_options=cfg["model_options"],
    )
    for p in cfg["procedures"][1:]:
        SimConfig(**{**config.__dict__, "procedure": p})  # validate every procedure up front
    workers = cfg["workers"]
    if cfg["grid"] is not None:
        reports = power_curve(config, cfg["grid"], workers, cfg["procedures"])
    elif cfg["boundary"] is not None:
        reports = boundary_size_sweep(config, cfg["boundary"], workers, cfg["procedures"])
    else:
        reports = list(compare_procedures(config, cfg["procedures"], workers).values())
    dicts = [r.to_dict() for r in reports]
    for d in dicts:
        if d["n_error"]:
            print(f"warning: {d['procedure']}: {d['n_error']} replicate(s) failed", file=sys.stderr)
    return {"reports": dicts}, list(SIM_COLUMNS), dicts


# ------------------------------------------------------------------- driver

_COMMANDS = {
    "critical": (resolve_critical, run_critical, "json"),
    "test": (resolve_test, run_test, "json"),
    "power": (resolve_power, run_power, "csv"),
    "simulate": (resolve_simulate, run_simulate, "csv"),
}


def render(command: str, cfg: dict, fmt: str) -> str:
    _, run, _ = _COMMANDS[command]
    result, columns, rows = run(cfg)
    if fmt == "csv":
        return _to_csv(columns, rows)
    # the worker count changes scheduling only, never results, so it stays out of the report
    echo = {k: v for k, v in cfg.items() if k != "workers"}
    return _to_json({"command": command, "version": __version__, "config": echo, "result": result})


def _write_record(path: Path, command: str, cfg: dict, fmt: str, out: str | None, text: str, seconds: float):
    record = {
        "command": command,
        "version": __version__,
        "format": fmt,
        "seed": cfg.get("seed"),
        "config": cfg,
        "outputs": [
            {
                "path": out,
                "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
                "bytes": len(text.encode("utf-8")),
            }
        ],
        "duration_seconds": seconds,
    }
    path.write_text(_to_json(record), encoding="utf-8")


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), help="report format (default: json for critical/test, csv for power/simulate)")
    common.add_argument("--seed", type=int, help="master seed (simulate; overrides the config file)")
    common.add_argument("--record", help="RunRecord sidecar path (default: <out>.run.json when --out is given)")

    parser = argparse.ArgumentParser(prog="equivtest", description="Optimal equivalence tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("critical", parents=[common], help="critical constant C(alpha, delta, sigma)")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--sigma", type=float, default=1.0)

    p = sub.add_parser("test", parents=[common], help="run an equivalence test on a data file")
    p.add_argument("--method", choices=("ump", "tost", "plugin"), required=True)
    p.add_argument("--data", required=True, help="CSV, one observation per line, '#' comments")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--delta", "--Delta", dest="delta", type=float, help="margin half-width on the scale of the parameter")
    p.add_argument("--lower", type=float, help="lower margin; re-centered with --upper")
    p.add_argument("--upper", type=float)
    p.add_argument("--sigma", type=float, help="known standard deviation (ump)")
    p.add_argument("--a", help="coefficients of a'mu for multivariate ump, e.g. 1,-1,0")
    p.add_argument("--Sigma", help="known covariance of one row, rows separated by ';'")
    p.add_argument("--model", choices=("normal", "two_sample_normal", "bernoulli"), default="normal")
    p.add_argument("--reference", type=float, default=0.5, help="bernoulli: test p - reference")
    p.add_argument("--sigma-hat", type=float, help="plugin: supply the scale estimate")

    p = sub.add_parser("power", parents=[common], help="analytic power or local power bound on a grid")
    p.add_argument("--method", choices=("ump", "plugin", "tost", "onesided"), required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--delta", type=float, required=True, help="margin on the scale of the statistic (local scale)")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--grid", required=True, help="comma-separated delta' (or h) values")
    p.add_argument("--model", choices=("normal", "two_sample_normal", "bernoulli", "gaussian_mean"))
    p.add_argument("--theta", help="base point theta0 with g(theta0) = 0")
    p.add_argument("--allocation", type=float)
    p.add_argument("--reference", type=float)
    p.add_argument("--Sigma")
    p.add_argument("--a")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo size and power from an INI config")
    p.add_argument("config")

    p = sub.add_parser("replay", help="rerun the command stored in a RunRecord")
    p.add_argument("record")
    p.add_argument("--out", help="write the report here instead of the recorded path")
    return parser


def _replay(args) -> tuple[str, dict, str, str | None]:
    try:
        record = json.loads(Path(args.record).read_text(encoding="utf-8"))
        command, cfg, fmt = record["command"], record["config"], record["format"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read RunRecord {args.record!r}: {exc}") from None
    if command not in _COMMANDS:
        raise UsageError(f"RunRecord has unknown command {command!r}")
    out = args.out if args.out is not None else record["outputs"][0]["path"]
    return command, cfg, fmt, out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        if args.command == "replay":
            command, cfg, fmt, out = _replay(args)
            record_path = None
        else:
            command = args.command
            resolve, _, default_fmt = _COMMANDS[command]
            cfg = resolve(args)
            fmt = args.format or default_fmt
            out = args.out
            record_path = args.record or (f"{out}.run.json" if out is not None else None)
        text = render(command, cfg, fmt)
        _emit(text, out)
        if record_path is not None:
            _write_record(Path(record_path), command, cfg, fmt, out, text, time.perf_counter() - start)
    except UsageError as exc:
        print(f"equivtest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateDataError, SingularMatrixError) as exc:
        print(f"equivtest: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (DomainError, ValueError) as exc:
        print(f"equivtest: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as exc:
        print(f"equivtest: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
