"""Command-line front end.

Subcommands::

    smscore fit       estimate on a CSV file, with analytic and bootstrap intervals
    smscore simulate  Monte Carlo run for chosen designs, methods and sizes
    smscore table1    RMSE table over the simulated designs
    smscore table2    interval coverage table
    smscore figures   distribution summaries (density and QQ data)

Exit status is 0 on success, 2 for usage errors and 1 when the data or
the numerics fail; failures print ``error [module]: cause`` on stderr.
Machine-readable reports are JSON with a ``schema_version`` field and are
only written once the whole computation has succeeded.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .baseline import fit_maxscore_2d
from .dgp import gen_dataset, load_csv, write_csv
from .errors import SmsError
from .estimate import FitOptions, fit, fit_angle
from .infer import (
    bootstrap_angle,
    bootstrap_studentized_many,
    ci_normal,
    ci_normal_angle,
    sandwich,
    sandwich_angle,
)
from .loss import LossKind, LossSpec
from .mc import (
    DESIGN_ORDER,
    METHOD_ORDER,
    SURROGATES,
    WORKERS_ENV,
    McConfig,
    figures_csv,
    format_table1,
    format_table2,
    run_coverage,
    run_distribution,
    run_rmse,
    simulate,
)

SCHEMA_VERSION = 1
LOSS_CHOICES = [k.value for k in LossKind] + ["maxscore"]


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def _level(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"level must be in (0, 1), got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return v


def _int_list(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if any(v < 3 for v in vals):
        raise argparse.ArgumentTypeError("sample sizes must be at least 3")
    return vals


def _name_list(choices):
    def parse(text: str) -> tuple:
        vals = tuple(v.strip() for v in text.split(",") if v.strip())
        bad = [v for v in vals if v not in choices]
        if bad or not vals:
            raise argparse.ArgumentTypeError(
                f"invalid choice {','.join(bad) or text!r}; supported: {', '.join(choices)}"
            )
        return vals

    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smscore", description="Surrogate maximum score estimation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    f = sub.add_parser("fit", help="estimate on a CSV file with columns y,x1,...,xd")
    f.add_argument("--data", required=True, help="input CSV")
    f.add_argument("--loss", default="logistic", choices=LOSS_CHOICES, metavar="LOSS",
                   help=f"one of {', '.join(LOSS_CHOICES)} (default logistic)")
    f.add_argument("--a", type=_positive_float, default=None, help="loss scale (default depends on the loss)")
    f.add_argument("--estimator", choices=["ball", "unit"], default="ball",
                   help="ball: maximize over ||b|| <= radius; unit: angle on the unit circle (d = 2)")
    f.add_argument("--radius", type=_positive_float, default=100.0)
    f.add_argument("--tol", type=_positive_float, default=1e-10, help="gradient tolerance")
    f.add_argument("--boot", type=_nonneg_int, default=0, help="bootstrap resamples; 0 skips the bootstrap")
    f.add_argument("--level", type=_level, default=0.95)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--output", "--out", dest="output", help="write the JSON report here")
    f.add_argument("--json", action="store_true", help="print JSON instead of text")

    def mc_flags(q, methods, sizes_default="250,1000", many=True):
        q.add_argument("--reps", type=_positive_int, default=10_000)
        q.add_argument("--seed", type=int, default=0)
        if many:
            q.add_argument("--sizes", type=_int_list, default=_int_list(sizes_default),
                           help=f"comma-separated sample sizes (default {sizes_default})")
            q.add_argument("--designs", type=_name_list(DESIGN_ORDER), default=tuple(DESIGN_ORDER))
            q.add_argument("--methods", type=_name_list(methods), default=tuple(methods))
        q.add_argument("--estimator", choices=["unit", "ball"], default="unit",
                       help="surrogate fit: unit-norm angle (default) or norm ball")
        q.add_argument("--workers", type=_positive_int, default=None,
                       help=f"worker processes (default ${WORKERS_ENV} or 1)")
        q.add_argument("--output", "--out", dest="output", help="write the JSON report here")
        q.add_argument("--json", action="store_true", help="print JSON instead of text")

    s = sub.add_parser("simulate", help="Monte Carlo draws of the angle estimate for one or more cells")
    mc_flags(s, METHOD_ORDER, many=False)
    s.add_argument("--design", type=_name_list(DESIGN_ORDER), default=("normal",),
                   help="design name(s), comma-separated")
    s.add_argument("--method", type=_name_list(METHOD_ORDER), default=("logistic",),
                   help="method name(s), comma-separated")
    s.add_argument("--n", type=_int_list, default=(1000,), help="sample size(s), comma-separated")
    s.add_argument("--inference", choices=["none", "analytic", "bootstrap"], default="none")
    s.add_argument("--boot", type=_positive_int, default=399)
    s.add_argument("--level", type=_level, default=0.95)
    s.add_argument("--dataset-csv", metavar="PATH",
                   help="instead of a Monte Carlo run, write one dataset (first design and n) to PATH")

    t1 = sub.add_parser("table1", help="RMSE of the angle estimates")
    mc_flags(t1, METHOD_ORDER)
    t2 = sub.add_parser("table2", help="coverage of analytic and bootstrap intervals")
    mc_flags(t2, list(SURROGATES))
    t2.add_argument("--boot", type=_positive_int, default=399)
    t2.add_argument("--level", type=_level, default=0.95)
    fg = sub.add_parser("figures", help="density and QQ data for the angle estimates")
    mc_flags(fg, list(SURROGATES), sizes_default="1000")
    fg.add_argument("--csv", help="write the density and QQ series here")
    return p


# ---------------------------------------------------------------------------


def _clean(obj):
    """Make a report JSON-safe: arrays to lists, non-finite floats to null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dumps(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, allow_nan=False) + "\n"


def _write_atomic_with(path: str, writer) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _write_atomic(path: str, text: str) -> None:
    def writer(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)

    _write_atomic_with(path, writer)


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if not env:
        return 1
    try:
        v = int(env)
    except ValueError:
        raise UsageError(f"${WORKERS_ENV} must be a positive integer, got {env!r}") from None
    if v < 1:
        raise UsageError(f"${WORKERS_ENV} must be a positive integer, got {env!r}")
    return v


def _fmt_ci(ci: Optional[dict]) -> str:
    if ci is None:
        return "-"
    return f"[{ci['lo']:.6f}, {ci['hi']:.6f}]"


def _fit_report(args) -> tuple[dict, str]:
    if args.loss == "maxscore" and args.a is not None:
        raise UsageError("--a does not apply to --loss maxscore")
    if args.loss == "maxscore" and args.boot:
        raise UsageError("--boot is not available for --loss maxscore")
    if args.boot and args.boot < 99:
        raise UsageError(f"--boot needs at least 99 resamples, got {args.boot}")
    ds = load_csv(args.data)
    base = {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit",
        "data": args.data,
        "n": ds.n,
        "d": ds.d,
        "loss": args.loss,
        "seed": args.seed,
    }

    if args.loss == "maxscore":
        res = fit_maxscore_2d(ds)
        report = {**base, "estimator": "maxscore", **res.to_dict(), "b_hat": res.direction.tolist(),
                  "se": None, "ci_normal": None, "ci_boot": None}
        text = (
            f"maximum score, n = {ds.n}\n"
            f"  theta_hat  {res.theta_hat:.6f}\n"
            f"  score      {res.score:.6f}\n"
            f"  argmax arc [{res.argmax_interval[0]:.6f}, {res.argmax_interval[1]:.6f}]"
        )
        return report, text

    spec = LossSpec.from_name(args.loss, args.a)
    base.update({"a": spec.a, "estimator": args.estimator, "level": args.level})
    warnings: list = []
    if args.estimator == "unit":
        if ds.d != 2:
            raise UsageError(f"--estimator unit needs two regressors, the data has {ds.d}")
        res = fit_angle(ds, spec, grad_tol=args.tol)
        sw = sandwich_angle(ds, spec, res.theta_hat)
        cis = [ci_normal_angle(res, sw, args.level)]
        boots = [bootstrap_angle(ds, spec, args.boot, args.level, args.seed, res, sw, args.tol)] if args.boot else [None]
        fit_info = res.to_dict()
        sw_info = sw.to_dict()
        b_hat = res.b_hat
        theta = res.theta_hat
    else:
        opts = FitOptions(radius=args.radius, grad_tol=args.tol)
        res = fit(ds, spec, opts)
        warnings = list(res.warnings)
        b_hat = res.b_hat
        theta = res.theta_hat
        fit_info = res.to_dict()
        targets = ["angle"] if ds.d == 2 else [np.eye(ds.d)[j] for j in range(ds.d)]
        if res.on_boundary:
            warnings.append("no standard errors: inference needs an interior solution")
            cis, boots, sw_info = [None] * len(targets), [None] * len(targets), None
        else:
            sw = sandwich(ds, spec, b_hat)
            sw_info = sw.to_dict()
            cis = [ci_normal(res, sw, None if isinstance(t, str) else t, args.level) for t in targets]
            if args.boot:
                boots = bootstrap_studentized_many(ds, spec, opts, targets, args.boot, args.level, args.seed, res, sw)
            else:
                boots = [None] * len(targets)

    ci_list = [None if c is None else c.to_dict() for c in cis]
    boot_list = [None if c is None else c.to_dict() for c in boots]
    single = len(ci_list) == 1
    report = {
        **base,
        "b_hat": np.asarray(b_hat).tolist(),
        "theta_hat": theta,
        "se": (ci_list[0]["se"] if ci_list[0] else None) if single else [c and c["se"] for c in ci_list],
        "ci_normal": ci_list[0] if single else ci_list,
        "ci_boot": boot_list[0] if single else boot_list,
        "fit": fit_info,
        "sandwich": sw_info,
        "warnings": warnings,
    }

    lines = [f"{spec.label}, {args.estimator} estimator, n = {ds.n}, d = {ds.d}"]
    lines.append("  b_hat      " + "  ".join(f"{v:.6f}" for v in np.asarray(b_hat)))
    if theta is not None:
        lines.append(f"  theta_hat  {theta:.6f}")
    labels = ["angle"] if single else [f"b{j + 1}" for j in range(ds.d)]
    lines.append(f"  {'target':<10} {'estimate':>11} {'se':>10}   {'normal CI':<26} bootstrap CI")
    for lab, c, bc in zip(labels, ci_list, boot_list):
        if c is None:
            lines.append(f"  {lab:<10} {'-':>11} {'-':>10}   {'-':<26} -")
        else:
            lines.append(f"  {lab:<10} {c['estimate']:>11.6f} {c['se']:>10.6f}   {_fmt_ci(c):<26} {_fmt_ci(bc)}")
    for w in warnings:
        lines.append(f"  warning: {w}")
    return report, "\n".join(lines)


def _mc_config(args, **extra) -> McConfig:
    return McConfig(
        designs=args.designs,
        methods=args.methods,
        sample_sizes=args.sizes,
        reps=args.reps,
        master_seed=args.seed,
        workers=_workers(args),
        estimator=args.estimator,
        **extra,
    )


def _table1_report(args) -> tuple[dict, str]:
    report = run_rmse(_mc_config(args))
    out = report.to_dict(include_draws=False)
    out["kind"] = "table1"
    out["schema_version"] = SCHEMA_VERSION
    return out, format_table1(report)


def _table2_report(args) -> tuple[dict, str]:
    report = run_coverage(_mc_config(args, boot_S=args.boot, level=args.level))
    out = report.to_dict(include_draws=False)
    out["kind"] = "table2"
    out["schema_version"] = SCHEMA_VERSION
    return out, format_table2(report)


def _figures_report(args) -> tuple[dict, str, Optional[str]]:
    if len(args.sizes) != 1:
        raise UsageError("figures takes a single sample size")
    report, summaries = run_distribution(_mc_config(args))
    out = {
        "schema_version": SCHEMA_VERSION,
        "kind": "figures",
        "config": report.config.without_workers(),
        "panels": [s.to_dict() for s in summaries],
    }
    head = f"{'design':<9}{'method':<10}{'n':>6}{'mean':>11}{'sd':>10}{'skew':>9}{'ex.kurt':>9}{'QQ corr':>10}"
    lines = [head, "-" * len(head)]
    for s in summaries:
        lines.append(
            f"{s.design:<9}{s.method:<10}{s.n:>6}{s.mean:>11.5f}{s.sd:>10.5f}"
            f"{s.skewness:>9.3f}{s.excess_kurtosis:>9.3f}{s.qq_corr:>10.5f}"
        )
    csv_text = figures_csv(summaries) if args.csv else None
    return out, "\n".join(lines), csv_text


def _simulate_report(args) -> tuple[dict, str]:
    args.designs, args.methods, args.sizes = args.design, args.method, args.n
    if args.inference != "none" and "maxscore" in args.methods:
        raise UsageError("interval inference is not available for the maxscore method")
    cfg = _mc_config(args, inference=args.inference, boot_S=args.boot, level=args.level)
    report = simulate(cfg)
    out = report.to_dict(include_draws=True)
    out["kind"] = "simulate"
    out["schema_version"] = SCHEMA_VERSION
    head = f"{'design':<9}{'method':<10}{'n':>6}{'reps':>7}{'rmse':>10}{'bias':>10}"
    if args.inference != "none":
        head += f"{'cov.analytic':>14}"
    if args.inference == "bootstrap":
        head += f"{'cov.boot':>10}"
    lines = [head, "-" * len(head)]
    for entry in out["cells"]:
        row = (
            f"{entry['design']:<9}{entry['method']:<10}{entry['n']:>6}{entry['reps']:>7}"
            f"{entry['rmse']:>10.5f}{entry['bias']:>10.5f}"
        )
        if "coverage_analytic" in entry:
            row += f"{entry['coverage_analytic']:>14.3f}"
        if "coverage_boot" in entry:
            row += f"{entry['coverage_boot']:>10.3f}"
        lines.append(row)
    return out, "\n".join(lines)


def _write_dataset(args) -> int:
    design, n = args.design[0], args.n[0]
    ds = gen_dataset(design, n, args.seed)
    _write_atomic_with(args.dataset_csv, lambda path: write_csv(ds, path))
    print(f"wrote {ds.n} rows from the {design} design to {args.dataset_csv}")
    return 0


def _run(args) -> int:
    if args.command == "simulate" and args.dataset_csv:
        return _write_dataset(args)

    csv_text = None
    t0 = time.perf_counter()
    if args.command == "simulate":
        report, text = _simulate_report(args)
    elif args.command == "fit":
        report, text = _fit_report(args)
    elif args.command == "table1":
        report, text = _table1_report(args)
    elif args.command == "table2":
        report, text = _table2_report(args)
    else:
        report, text, csv_text = _figures_report(args)

    payload = _dumps(report)
    if args.command != "fit":
        print(f"wall time {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    if args.output:
        _write_atomic(args.output, payload)
    if csv_text is not None:
        _write_atomic(args.csv, csv_text)
    sys.stdout.write(payload if args.json else text + "\n")
    return 0


def _error_module(exc: SmsError) -> str:
    """Package module of the innermost frame that raised, else the error's default."""
    name = exc.module
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("smscore.") and mod != __name__:
            name = mod.split(".", 1)[1]
        tb = tb.tb_next
    return name


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return _run(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except SmsError as exc:
        print(f"error [{_error_module(exc)}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
