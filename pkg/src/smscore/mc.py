"""Monte Carlo experiments over the simulated designs.

Every replication ``r`` of cell (design, n) draws its dataset from the seed
``[master, design_index, n, r]``; all methods are fitted on that common
dataset.  If a method fails on it (a degenerate draw), that method alone
moves on to ``[master, design_index, n, r, attempt]`` for attempt = 1, 2, ...
Results are gathered by replication index, so the number of worker
processes never changes the output.

Surrogate methods use the unit-norm angle fit by default, which is the
estimator the reference tables are computed with; ``estimator="ball"``
switches to the norm-ball fit with delta-method inference.
"""

from __future__ import annotations

import enum
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .baseline import fit_maxscore_2d
from .dgp import DESIGNS, XDist, gen_dataset
from .errors import DegenerateDataError, ExperimentError, SmsError
from .estimate import FitOptions, fit, fit_angle, wrap_angle
from .infer import (
    bootstrap_angle,
    bootstrap_studentized,
    ci_normal,
    ci_normal_angle,
    sandwich,
    sandwich_angle,
)
from .loss import LossSpec

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 25
MAX_REDRAW_FRACTION = 0.01
WORKERS_ENV = "SMSCORE_WORKERS"

DESIGN_ORDER = [d.value for d in XDist]
DESIGN_LABELS = {"normal": "(i) Normal", "t5": "(ii) t5", "laplace": "(iii) Laplace"}


class Method(str, enum.Enum):
    MAXSCORE = "maxscore"
    LOGISTIC = "logistic"
    HUBER = "huber"
    PROBIT = "probit"


METHOD_ORDER = [m.value for m in Method]
SURROGATES = ("logistic", "huber", "probit")
METHOD_LABELS = {
    "maxscore": "(0) Conventional Maximum Score",
    "logistic": "(1) Surrogate Logistic",
    "huber": "(2) Surrogate Huber",
    "probit": "(3) Surrogate Probit",
}
METHOD_LOSS = {m: LossSpec.from_name(m) for m in SURROGATES}


class Estimator(str, enum.Enum):
    UNIT = "unit"
    BALL = "ball"


class Inference(str, enum.Enum):
    NONE = "none"
    ANALYTIC = "analytic"
    BOOTSTRAP = "bootstrap"


@dataclass(frozen=True)
class McConfig:
    designs: tuple = tuple(DESIGN_ORDER)
    methods: tuple = tuple(METHOD_ORDER)
    sample_sizes: tuple = (250, 1000)
    reps: int = 10_000
    boot_S: int = 399
    level: float = 0.95
    master_seed: int = 0
    workers: int = 1
    inference: str = "none"
    estimator: str = "unit"
    radius: float = 100.0
    grad_tol: float = 1e-10

    def __post_init__(self):
        for name in ("designs", "methods", "sample_sizes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.reps < 1:
            raise ExperimentError(f"reps must be at least 1, got {self.reps}")
        if not self.sample_sizes:
            raise ExperimentError("sample_sizes must be nonempty")
        if any(n < 3 for n in self.sample_sizes):
            raise ExperimentError("every sample size must be at least 3")
        for d in self.designs:
            if d not in DESIGNS:
                raise ExperimentError(f"unknown design {d!r}; supported: {', '.join(DESIGN_ORDER)}")
        for m in self.methods:
            if m not in METHOD_ORDER:
                raise ExperimentError(f"unknown method {m!r}; supported: {', '.join(METHOD_ORDER)}")
        try:
            Inference(self.inference)
            Estimator(self.estimator)
        except ValueError as exc:
            raise ExperimentError(str(exc)) from None
        if self.inference == Inference.BOOTSTRAP and self.boot_S < 99:
            raise ExperimentError(f"boot_S must be at least 99, got {self.boot_S}")
        if not 0 < self.level < 1:
            raise ExperimentError(f"level must be in (0, 1), got {self.level}")
        if self.workers < 1:
            raise ExperimentError(f"workers must be at least 1, got {self.workers}")

    def without_workers(self) -> dict:
        out = asdict(self)
        out.pop("workers")
        return out


@dataclass
class CellResult:
    design: str
    method: str
    n: int
    theta: np.ndarray
    se: Optional[np.ndarray] = None
    cover_analytic: Optional[np.ndarray] = None
    cover_boot: Optional[np.ndarray] = None
    redraws: int = 0
    boot_rejections: int = 0

    @property
    def theta0(self) -> float:
        return DESIGNS[self.design].theta0

    @property
    def rmse(self) -> float:
        return float(np.sqrt(np.mean((self.theta - self.theta0) ** 2)))

    @property
    def bias(self) -> float:
        return float(np.mean(self.theta) - self.theta0)

    @property
    def coverage_analytic(self) -> Optional[float]:
        return None if self.cover_analytic is None else float(np.mean(self.cover_analytic))

    @property
    def coverage_boot(self) -> Optional[float]:
        return None if self.cover_boot is None else float(np.mean(self.cover_boot))

    @property
    def mean_scaled_variance(self) -> Optional[float]:
        """Average estimated variance of ``sqrt(n) theta_hat``."""
        return None if self.se is None else float(np.mean(self.n * self.se**2))

    @property
    def mc_scaled_variance(self) -> float:
        """Monte Carlo variance of ``sqrt(n) theta_hat``."""
        return float(self.n * np.var(self.theta, ddof=1)) if len(self.theta) > 1 else 0.0

    def summary(self) -> dict:
        out = {
            "design": self.design,
            "method": self.method,
            "n": self.n,
            "reps": len(self.theta),
            "rmse": self.rmse,
            "bias": self.bias,
            "redraws": self.redraws,
        }
        if self.se is not None:
            out["coverage_analytic"] = self.coverage_analytic
            out["mean_scaled_variance"] = self.mean_scaled_variance
            out["mc_scaled_variance"] = self.mc_scaled_variance
        if self.cover_boot is not None:
            out["coverage_boot"] = self.coverage_boot
            out["boot_rejections"] = self.boot_rejections
        return out


@dataclass
class McReport:
    config: McConfig
    cells: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def cell(self, design: str, method: str, n: int) -> CellResult:
        return self.cells[(design, method, n)]

    def rmse(self, design: str, method: str, n: int) -> float:
        return self.cell(design, method, n).rmse

    def rmse_ratio(self, design: str, method: str) -> float:
        """RMSE at the largest sample size over RMSE at the smallest."""
        lo, hi = min(self.config.sample_sizes), max(self.config.sample_sizes)
        return self.rmse(design, method, hi) / self.rmse(design, method, lo)

    def coverage(self, design: str, method: str, n: int, kind: str = "analytic") -> Optional[float]:
        c = self.cell(design, method, n)
        return c.coverage_analytic if kind == "analytic" else c.coverage_boot

    def to_dict(self, include_draws: bool = True) -> dict:
        cells = []
        for key in sorted(self.cells, key=_cell_sort_key):
            c = self.cells[key]
            entry = c.summary()
            if include_draws:
                entry["theta_draws"] = c.theta.tolist()
            cells.append(entry)
        ratios = []
        if len(self.config.sample_sizes) > 1:
            for d in self.config.designs:
                for m in self.config.methods:
                    ratios.append({"design": d, "method": m, "rmse_ratio": self.rmse_ratio(d, m)})
        return {
            "schema_version": 1,
            "kind": "mc_report",
            "config": self.config.without_workers(),
            "cells": cells,
            "rmse_ratios": ratios,
        }


def _cell_sort_key(key):
    d, m, n = key
    return (DESIGN_ORDER.index(d), METHOD_ORDER.index(m), n)


def resolve_workers(requested: Optional[int] = None) -> int:
    """Worker count from the argument, else the environment, else 1."""
    if requested is not None:
        return int(requested)
    env = os.environ.get(WORKERS_ENV)
    return int(env) if env else 1


# ---------------------------------------------------------------------------
# One replication


def _data_seed(master: int, design: str, n: int, r: int, attempt: int) -> list:
    seed = [master, DESIGN_ORDER.index(design), n, r]
    if attempt:
        seed.append(attempt)
    return seed


def _one_method(method: str, ds, cfg: McConfig, boot_seed: list):
    """theta, se, analytic CI, bootstrap CI, bootstrap rejections for one dataset."""
    if method == Method.MAXSCORE:
        return fit_maxscore_2d(ds).theta_hat, None, None, None, 0
    spec = METHOD_LOSS[method]
    if cfg.estimator == Estimator.UNIT:
        return _one_unit(spec, ds, cfg, boot_seed)
    opts = FitOptions(radius=cfg.radius, grad_tol=cfg.grad_tol)
    res = fit(ds, spec, opts)
    if res.on_boundary:
        raise DegenerateDataError("surrogate fit on the boundary (separated data)")
    if cfg.inference == Inference.NONE:
        return res.theta_hat, None, None, None, 0
    sw = sandwich(ds, spec, res.b_hat)
    ci = ci_normal(res, sw, level=cfg.level)
    if cfg.inference == Inference.ANALYTIC:
        return res.theta_hat, ci.se, ci, None, 0
    bci = bootstrap_studentized(
        ds, spec, opts, "angle", cfg.boot_S, cfg.level, boot_seed, fit_result=res, sw=sw
    )
    return res.theta_hat, ci.se, ci, bci, bci.rejections


def _one_unit(spec, ds, cfg: McConfig, boot_seed: list):
    res = fit_angle(ds, spec, grad_tol=cfg.grad_tol)
    if cfg.inference == Inference.NONE:
        return res.theta_hat, None, None, None, 0
    sw = sandwich_angle(ds, spec, res.theta_hat)
    ci = ci_normal_angle(res, sw, level=cfg.level)
    if cfg.inference == Inference.ANALYTIC:
        return res.theta_hat, ci.se, ci, None, 0
    bci = bootstrap_angle(
        ds, spec, cfg.boot_S, cfg.level, boot_seed, fit_result=res, sw=sw, grad_tol=cfg.grad_tol
    )
    return res.theta_hat, ci.se, ci, bci, bci.rejections


def _replicate(cfg: McConfig, design: str, n: int, r: int) -> dict:
    theta0 = DESIGNS[design].theta0
    out = {}
    cache = {}
    for method in cfg.methods:
        for attempt in range(MAX_ATTEMPTS):
            seed = _data_seed(cfg.master_seed, design, n, r, attempt)
            if attempt not in cache:
                cache[attempt] = gen_dataset(design, n, seed)
            ds = cache[attempt]
            boot_seed = seed + [100 + METHOD_ORDER.index(method)]
            try:
                th, se, ci, bci, rej = _one_method(method, ds, cfg, boot_seed)
            except SmsError as exc:
                log.debug("replication %s/%s/n=%d/r=%d attempt %d failed: %s", design, method, n, r, attempt, exc)
                continue
            # Keep the representative nearest the truth, so errors are wrapped.
            th = theta0 + float(wrap_angle(th - theta0))
            out[method] = (
                th,
                se,
                None if ci is None else ci.lo <= theta0 <= ci.hi,
                None if bci is None else bci.lo <= theta0 <= bci.hi,
                attempt,
                rej,
            )
            break
        else:
            raise ExperimentError(
                f"{design}/{method}/n={n}: replication {r} failed {MAX_ATTEMPTS} times"
            )
    return out


def _run_block(args) -> list:
    cfg, design, n, r0, r1 = args
    return [_replicate(cfg, design, n, r) for r in range(r0, r1)]


def _blocks(cfg: McConfig):
    size = max(1, math.ceil(cfg.reps / (4 * cfg.workers)))
    for design in cfg.designs:
        for n in cfg.sample_sizes:
            for r0 in range(0, cfg.reps, size):
                yield (cfg, design, n, r0, min(cfg.reps, r0 + size))


def simulate(cfg: McConfig) -> McReport:
    """Run every (design, method, n) cell of the configuration."""
    t0 = time.perf_counter()
    blocks = list(_blocks(cfg))
    if cfg.workers == 1:
        results = [_run_block(b) for b in blocks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_block, blocks))

    per_cell: dict = {}
    for (_, design, n, r0, _), reps in zip(blocks, results):
        per_cell.setdefault((design, n), []).extend(reps)

    report = McReport(cfg)
    analytic = cfg.inference != Inference.NONE
    boot = cfg.inference == Inference.BOOTSTRAP
    for (design, n), reps in per_cell.items():
        for method in cfg.methods:
            rows = [rep[method] for rep in reps]
            inferential = analytic and method != Method.MAXSCORE
            cell = CellResult(
                design=design,
                method=method,
                n=n,
                theta=np.array([row[0] for row in rows]),
                se=np.array([row[1] for row in rows]) if inferential else None,
                cover_analytic=np.array([row[2] for row in rows]) if inferential else None,
                cover_boot=np.array([row[3] for row in rows]) if inferential and boot else None,
                redraws=sum(row[4] for row in rows),
                boot_rejections=sum(row[5] for row in rows),
            )
            if cell.redraws > MAX_REDRAW_FRACTION * cfg.reps:
                raise ExperimentError(
                    f"{design}/{method}/n={n}: {cell.redraws} redraws in {cfg.reps} replications "
                    f"exceeds {MAX_REDRAW_FRACTION:.0%}"
                )
            report.cells[(design, method, n)] = cell
    report.wall_time = time.perf_counter() - t0
    return report


def run_rmse(cfg: McConfig) -> McReport:
    """Sampling error of the angle estimates; no inference."""
    return simulate(_replace(cfg, inference=Inference.NONE.value))


def run_coverage(cfg: McConfig) -> McReport:
    """Analytic and bootstrap interval coverage for the surrogate methods."""
    methods = tuple(m for m in cfg.methods if m != Method.MAXSCORE)
    return simulate(_replace(cfg, inference=Inference.BOOTSTRAP.value, methods=methods))


def _replace(cfg: McConfig, **changes) -> McConfig:
    d = asdict(cfg)
    d.update(changes)
    return McConfig(**d)


# ---------------------------------------------------------------------------
# Distribution summaries (density and QQ data)


@dataclass
class DistributionSummary:
    design: str
    method: str
    n: int
    mean: float
    sd: float
    skewness: float
    excess_kurtosis: float
    qq_corr: float
    mc_se_mean: float
    qq_empirical: np.ndarray
    qq_normal: np.ndarray
    grid: np.ndarray
    density: np.ndarray
    reference_density: np.ndarray

    def to_dict(self) -> dict:
        return {
            "design": self.design,
            "method": self.method,
            "n": self.n,
            "mean": self.mean,
            "sd": self.sd,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
            "qq_corr": self.qq_corr,
        }


def summarize_distribution(cell: CellResult, grid_points: int = 201) -> DistributionSummary:
    """Moments, QQ pairs against a matched normal, and density curves."""
    draws = np.asarray(cell.theta, dtype=float)
    reps = draws.size
    mean = float(draws.mean())
    sd = float(draws.std(ddof=1)) if reps > 1 else 0.0
    srt = np.sort(draws)
    p = (np.arange(1, reps + 1) - 0.5) / reps
    zq = stats.norm.ppf(p)
    qq_normal = mean + sd * zq
    if reps > 2 and sd > 0:
        qq_corr = float(np.corrcoef(srt, zq)[0, 1])
        skew = float(stats.skew(draws))
        kurt = float(stats.kurtosis(draws))
    else:
        qq_corr, skew, kurt = float("nan"), float("nan"), float("nan")
    width = 5.0 * sd if sd > 0 else 1.0
    grid = np.linspace(mean - width, mean + width, grid_points)
    if reps > 2 and sd > 0:
        density = stats.gaussian_kde(draws)(grid)
        reference = stats.norm.pdf(grid, mean, sd)
    else:
        density = np.full(grid_points, np.nan)
        reference = np.full(grid_points, np.nan)
    return DistributionSummary(
        design=cell.design,
        method=cell.method,
        n=cell.n,
        mean=mean,
        sd=sd,
        skewness=skew,
        excess_kurtosis=kurt,
        qq_corr=qq_corr,
        mc_se_mean=sd / math.sqrt(reps) if reps else float("nan"),
        qq_empirical=srt,
        qq_normal=qq_normal,
        grid=grid,
        density=density,
        reference_density=reference,
    )


def run_distribution(cfg: McConfig) -> tuple[McReport, list]:
    """Surrogate draws at a single sample size plus their distribution summaries."""
    methods = tuple(m for m in cfg.methods if m != Method.MAXSCORE)
    sizes = cfg.sample_sizes if len(cfg.sample_sizes) == 1 else (max(cfg.sample_sizes),)
    report = simulate(_replace(cfg, inference=Inference.NONE.value, methods=methods, sample_sizes=sizes))
    summaries = [summarize_distribution(report.cells[k]) for k in sorted(report.cells, key=_cell_sort_key)]
    return report, summaries


def figures_csv(summaries: list) -> str:
    """Long-format CSV: design, method, n, series, x, y.

    Series ``density`` and ``reference`` hold the curves over the grid;
    ``qq`` pairs normal reference quantiles (x) with empirical quantiles (y).
    """
    buf = io.StringIO()
    buf.write("design,method,n,series,x,y\n")
    for s in summaries:
        for series, xs, ys in (
            ("density", s.grid, s.density),
            ("reference", s.grid, s.reference_density),
            ("qq", s.qq_normal, s.qq_empirical),
        ):
            for xv, yv in zip(xs, ys):
                buf.write(f"{s.design},{s.method},{s.n},{series},{xv!r},{yv!r}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Text tables


def format_table1(report: McReport) -> str:
    sizes = sorted(report.config.sample_sizes)
    lo, hi = sizes[0], sizes[-1]
    head = f"{'X':<15}{'Estimation Method':<33}" + "".join(f"{'RMSE(' + str(n) + ')':>12}" for n in sizes)
    if len(sizes) > 1:
        head += f"{'RMSE(' + str(hi) + ')/RMSE(' + str(lo) + ')':>24}"
    rule = "-" * len(head)
    lines = [rule, head, rule]
    for d in report.config.designs:
        for i, m in enumerate(report.config.methods):
            label = DESIGN_LABELS[d] if i == 0 else ""
            row = f"{label:<15}{METHOD_LABELS[m]:<33}" + "".join(
                f"{report.rmse(d, m, n):>12.3f}" for n in sizes
            )
            if len(sizes) > 1:
                row += f"{report.rmse_ratio(d, m):>24.3f}"
            lines.append(row)
        lines.append(rule)
    lines.append(f"Replications per cell: {report.config.reps}")
    return "\n".join(lines)


def format_table2(report: McReport) -> str:
    sizes = sorted(report.config.sample_sizes)
    cols = "".join(f"{'n=' + str(n):>9}" for n in sizes)
    head1 = f"{'':<15}{'':<26}{'(A) Analytic':^{9 * len(sizes)}}   {'(B) Bootstrap':^{9 * len(sizes)}}"
    head2 = f"{'X':<15}{'Estimation Method':<26}{cols}   {cols}"
    rule = "-" * len(head2)
    lines = [rule, head1, head2, rule]
    methods = [m for m in report.config.methods if m != Method.MAXSCORE]
    for d in report.config.designs:
        for i, m in enumerate(methods):
            label = DESIGN_LABELS[d] if i == 0 else ""
            a = "".join(f"{report.coverage(d, m, n, 'analytic'):>9.3f}" for n in sizes)
            b = "".join(f"{report.coverage(d, m, n, 'boot'):>9.3f}" for n in sizes)
            lines.append(f"{label:<15}{METHOD_LABELS[m]:<26}{a}   {b}")
        lines.append(rule)
    lines.append(
        f"Nominal level {report.config.level:.2f}; replications per cell: {report.config.reps}; "
        f"bootstrap resamples: {report.config.boot_S}"
    )
    return "\n".join(lines)
