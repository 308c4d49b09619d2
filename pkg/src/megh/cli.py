"""Command-line interface: ``megh <command> [options]``.

Commands: fit, test-re, diagnose, km, simulate, study. Each writes its
results plus a ``manifest.json`` into ``--out``.

Exit codes: 0 success (a non-converged fit still counts), 2 usage error,
3 invalid data or model, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import BaselineFamily
from .data import ColumnRoles, km_by_cluster, load_dataset, summarize, write_dataset, write_km_csv
from .diagnostics import diagnose, lrt_random_effects, write_gradient_csv
from .errors import ContractError, DomainError, NumericError, ValidationError
from .estimation import FitConfig, fit
from .hazard import HazardStructure
from .model import ModelSpec
from .reffects import REFamily
from .simulation import load_truth, replication_seed, run_study, simulate_times

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4

_MODELS = {"gh": HazardStructure.GH, "megh1": HazardStructure.MEGH_I, "megh2": HazardStructure.MEGH_II}


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip()) if text else ()


def _assignments(items, what: str) -> dict:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"{what} must look like name=value, got {item!r}")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{what} value for {name!r} is not a number") from None
    return out


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("MEGH_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise argparse.ArgumentTypeError(f"MEGH_SEED must be an integer, got {env!r}") from None
    return 0


def _data_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("data")
    g.add_argument("--data", required=True, help="CSV file with a header row")
    g.add_argument("--time-col", default="time")
    g.add_argument("--status-col", default="status")
    g.add_argument("--cluster-col", default="cluster")
    g.add_argument("--hazard-cols", default="", help="comma-separated hazard-scale covariates")
    g.add_argument("--time-cols", default="", help="comma-separated time-scale covariates")
    g.add_argument("--standardize", default="", help="comma-separated columns to standardise")
    g.add_argument("--truncate", action="append", metavar="COL=CAP", help="cap a column before standardising")
    g.add_argument("--time-divisor", type=float, default=1.0, help="divide raw times by this")
    return p


def _model_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=sorted(_MODELS), default="megh1")
    g.add_argument("--baseline", choices=[b.value for b in BaselineFamily], default="pgw")
    g.add_argument("--re", choices=[f.value for f in REFamily], default="normal")
    g.add_argument("--t-df", type=float, default=5.0, help="Student-t degrees of freedom")
    g.add_argument("--fix", action="append", metavar="NAME=VALUE", help="hold a parameter fixed")
    g.add_argument("--starts", type=int, default=3, help="optimiser starts")
    g.add_argument("--no-se", action="store_true", help="skip standard errors")
    return p


def _common_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="random seed (falls back to MEGH_SEED)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="megh", description="Mixed-effects general hazard models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    data, model, common = _data_parent(), _model_parent(), _common_parent()
    sub.add_parser("fit", parents=[data, model, common], help="fit a model")
    sub.add_parser("test-re", parents=[data, model, common], help="test for zero random-effects variance")
    d = sub.add_parser("diagnose", parents=[data, model, common], help="gradient-function diagnostic")
    d.add_argument("--grid", type=int, default=101, help="number of grid points")
    d.add_argument("--grid-width", type=float, default=4.0, help="grid half-width in fitted sds")
    d.add_argument("--boot", type=int, default=200, help="bootstrap replicates for the bands")
    sub.add_parser("km", parents=[data, common], help="Kaplan-Meier curves by cluster")
    s = sub.add_parser("simulate", parents=[common], help="simulate datasets from a truth file")
    s.add_argument("--truth", required=True)
    s.add_argument("--reps", type=int, default=1)
    st = sub.add_parser("study", parents=[common], help="replication study from a truth file")
    st.add_argument("--truth", required=True)
    st.add_argument("--reps", type=int, default=50)
    st.add_argument("--fit-models", default="gh,megh1,megh2",
                    help="comma-separated structures, fitted with the truth's baseline and effects family")
    st.add_argument("--starts", type=int, default=1)
    st.add_argument("--no-se", action="store_true")
    return parser


def _roles(args) -> ColumnRoles:
    return ColumnRoles(
        time=args.time_col,
        status=args.status_col,
        cluster=args.cluster_col,
        hazard=_csv_list(args.hazard_cols),
        time_scale=_csv_list(args.time_cols),
        truncate=_assignments(args.truncate, "--truncate"),
        time_divisor=args.time_divisor,
    )


def _load(args):
    return load_dataset(args.data, _roles(args), _csv_list(args.standardize))


def _model(args) -> ModelSpec:
    return ModelSpec(_MODELS[args.model], BaselineFamily(args.baseline), REFamily(args.re), args.t_df)


def _fit_config(args, seed: int) -> FitConfig:
    return FitConfig(n_starts=args.starts, seed=seed, compute_se=not args.no_se,
                     fixed=_assignments(args.fix, "--fix"))


def _write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _write_coef_csv(path: Path, fit_dict: dict) -> Path:
    lines = ["name,estimate,se,ci_lower,ci_upper"]
    for row in fit_dict["parameters"]:
        vals = [row["estimate"], row["se"], row["ci_lower"], row["ci_upper"]]
        lines.append(",".join([row["name"], *("" if v is None else repr(v) for v in vals)]))
    path.write_text("\n".join(lines) + "\n")
    return path


def _cmd_fit(args, seed, out: Path, manifest):
    data = _load(args)
    res = fit(_model(args), data, config=_fit_config(args, seed))
    payload = res.to_dict(data)
    payload["data"] = summarize(data)
    manifest["outputs"] += [str(_write_json(out / "fit.json", payload)),
                            str(_write_coef_csv(out / "coefficients.csv", payload))]
    print(f"{res.model.label()}: log-lik {res.log_lik:.4f}, AIC {res.aic:.3f}, converged {res.converged}")


def _cmd_test_re(args, seed, out: Path, manifest):
    data = _load(args)
    model = _model(args)
    if not model.has_random_effects:
        raise ContractError("test-re needs --model megh1 or megh2")
    lrt, full, reduced = lrt_random_effects(model, data, _fit_config(args, seed))
    payload = {"test": lrt.to_dict(), "full": full.to_dict(data), "reduced": reduced.to_dict(data)}
    manifest["outputs"].append(str(_write_json(out / "lrt.json", payload)))
    print(f"LRT statistic {lrt.statistic:.4f}, p-value {lrt.p_value:.4g} ({lrt.case.value})")


def _cmd_diagnose(args, seed, out: Path, manifest):
    from .diagnostics import default_grid

    data = _load(args)
    model = _model(args)
    if not model.has_random_effects:
        raise ContractError("diagnose needs --model megh1 or megh2")
    res = fit(model, data, config=_fit_config(args, seed))
    grid = default_grid(res, args.grid, args.grid_width)
    diag = diagnose(res, data, grid, n_boot=args.boot, seed=seed)
    manifest["outputs"] += [str(write_gradient_csv(diag, out / "gradient.csv")),
                            str(_write_json(out / "fit.json", res.to_dict(data)))]
    manifest["checks"] = {
        "gradient_integral": diag.integral,
        "exceeds_band": diag.exceeds,
        "bootstrap_failures": diag.n_failed,
        "bootstrap_failure_warning": diag.failure_warning,
    }
    print(f"integral of gradient against fitted law: {diag.integral:.6f}; exceeds band: {diag.exceeds}")


def _cmd_km(args, seed, out: Path, manifest):
    data = _load(args)
    manifest["outputs"].append(str(write_km_csv(km_by_cluster(data), out / "km.csv")))
    print(f"{data.r} clusters written")


def _cmd_simulate(args, seed, out: Path, manifest):
    config = load_truth(args.truth)
    for i in range(args.reps):
        data = simulate_times(config, seed=replication_seed(seed, i))
        manifest["outputs"].append(str(write_dataset(data, out / f"sim_{i:04d}.csv")))
    print(f"{args.reps} datasets written to {out}")


def _cmd_study(args, seed, out: Path, manifest):
    from dataclasses import replace

    config = replace(load_truth(args.truth), seed=seed)
    names = _csv_list(args.fit_models)
    unknown = [name for name in names if name not in _MODELS]
    if unknown:
        raise ContractError(f"unknown structures {unknown}; choose from {sorted(_MODELS)}")
    models = [
        ModelSpec(_MODELS[name], config.model.baseline, config.model.re_family, config.model.t_df)
        for name in names
    ]
    fit_config = FitConfig(n_starts=args.starts, seed=seed, compute_se=not args.no_se)
    report = run_study(config, args.reps, models, fit_config, jobs=max(1, args.jobs))
    manifest["outputs"] += [str(report.to_json(out / "study.json")), str(report.to_csv(out / "study.csv"))]
    for name, s in report.summary()["models"].items():
        if s.get("fits"):
            print(f"{name}: mean AIC {s['mean_aic']:.2f}, LRT power {s['lrt_power']}")


_COMMANDS = {
    "fit": _cmd_fit,
    "test-re": _cmd_test_re,
    "diagnose": _cmd_diagnose,
    "km": _cmd_km,
    "simulate": _cmd_simulate,
    "study": _cmd_study,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        seed = _seed(args)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config_echo = {k: v for k, v in sorted(vars(args).items())}
    manifest = {
        "command": args.command,
        "config": config_echo,
        "seed": seed,
        "version": __version__,
        "outputs": [],
    }
    start = time.perf_counter()
    try:
        _COMMANDS[args.command](args, seed, out, manifest)
        code = EXIT_OK
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except ValidationError as exc:
        manifest["error"] = {"kind": "validation", "message": str(exc), "problems": list(exc.problems)}
        print(f"validation error: {exc}", file=sys.stderr)
        code = EXIT_VALIDATION
    except (ContractError, DomainError) as exc:
        manifest["error"] = {"kind": "validation", "message": str(exc)}
        print(f"invalid request: {exc}", file=sys.stderr)
        code = EXIT_VALIDATION
    except (NumericError, FloatingPointError, OverflowError) as exc:
        manifest["error"] = {"kind": "numeric", "message": str(exc)}
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    manifest["wall_time"] = round(time.perf_counter() - start, 3)
    manifest["exit_code"] = code
    _write_json(out / "manifest.json", manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
