"""Standard errors and confidence intervals for the surrogate estimator.

Two routes are provided:

* the plug-in sandwich ``H^{-1} Omega H^{-1}`` with normal critical values;
* the studentized (percentile-t) nonparametric bootstrap.

For two regressors the default target is the direction angle
``theta = atan2(b2, b1)``, handled by the delta method.  Any fixed linear
combination ``a'b`` can be targeted instead.

The unit-norm angle fit has a scalar parameter, so its sandwich is the
ratio ``Omega / H**2`` of the mean squared ``theta`` score to the squared
curvature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import norm

from .dgp import Dataset, _seed_tuple
from .errors import (
    BootstrapInstabilityError,
    DegenerateVarianceError,
    DomainError,
    IllConditionedError,
)
from .estimate import (
    AngleFit,
    FitOptions,
    FitResult,
    angle_of,
    fit,
    fit_angle,
    fit_angle_batch,
    fit_batch,
    wrap_angle,
)
from .loss import LossSpec, phi_derivs

MAX_CONDITION = 1e12
MAX_REJECT_FRACTION = 0.2
# Resamples are fitted in blocks of about this many observations; small
# blocks keep the working arrays in cache.
_BLOCK_CELLS = 32_000

Target = Union[str, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class SandwichEstimate:
    H_hat: np.ndarray
    Omega_hat: np.ndarray
    V_hat: np.ndarray

    def to_dict(self) -> dict:
        return {
            "H_hat": self.H_hat.tolist(),
            "Omega_hat": self.Omega_hat.tolist(),
            "V_hat": self.V_hat.tolist(),
        }


@dataclass(frozen=True)
class CiReport:
    estimate: float
    se: float
    lo: float
    hi: float
    level: float
    method: str  # "normal" or "studentized_bootstrap"
    target: str = "angle"
    boot_draws: Optional[int] = None
    rejections: Optional[int] = None

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def to_dict(self) -> dict:
        out = {
            "estimate": self.estimate,
            "se": self.se,
            "lo": self.lo,
            "hi": self.hi,
            "level": self.level,
            "method": self.method,
            "target": self.target,
        }
        if self.boot_draws is not None:
            out["boot_draws"] = self.boot_draws
            out["boot_rejections"] = self.rejections
        return out


def _neg_def_inverse(H: np.ndarray) -> np.ndarray:
    """``H^{-1}`` for symmetric negative definite ``H``, with a condition guard."""
    ev = np.linalg.eigvalsh(H)
    if not ev[-1] < 0:
        raise IllConditionedError(
            f"Hessian is not negative definite (largest eigenvalue {ev[-1]:.3e})",
            condition_number=math.inf,
        )
    cond = ev[0] / ev[-1]
    if cond > MAX_CONDITION:
        raise IllConditionedError(f"Hessian condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}", cond)
    c = np.linalg.cholesky(-H)
    cinv = np.linalg.solve(c, np.eye(len(H)))
    return -(cinv.T @ cinv)


def sandwich(dataset: Dataset, spec: LossSpec, b_hat) -> SandwichEstimate:
    """Plug-in estimate of the asymptotic covariance of ``sqrt(n) (b_hat - b)``."""
    b_hat = np.asarray(b_hat, dtype=float)
    z = dataset.signed_x()
    n = dataset.n
    _, d1, d2 = phi_derivs(spec, z @ b_hat)
    H = (z * d2[:, None]).T @ z / n
    H = 0.5 * (H + H.T)
    scores = z * d1[:, None]
    omega = scores.T @ scores / n
    omega = 0.5 * (omega + omega.T)
    hinv = _neg_def_inverse(H)
    V = hinv @ omega @ hinv
    return SandwichEstimate(H, omega, 0.5 * (V + V.T))


def _resolve_target(target: Target, b_hat: np.ndarray):
    """Return (label, estimate, gradient) of the scalar target at ``b_hat``."""
    if isinstance(target, str):
        if target != "angle":
            raise DomainError(f"unknown target {target!r}; use 'angle' or a coefficient vector")
        if b_hat.shape != (2,):
            raise DomainError("the angle target needs exactly two regressors")
        theta, grad = angle_of(b_hat)
        return "angle", theta, grad
    a = np.asarray(target, dtype=float)
    if a.shape != b_hat.shape:
        raise DomainError(f"target vector has shape {a.shape}, expected {b_hat.shape}")
    if not np.any(a):
        raise DomainError("target vector must be nonzero")
    return "linear:" + ",".join(f"{v:g}" for v in a), float(a @ b_hat), a


def ci_normal(fit_result: FitResult, sw: SandwichEstimate, a_vec=None, level: float = 0.95) -> CiReport:
    """Normal-approximation interval ``estimate +/- z * sqrt(a'Va / n)``.

    With ``a_vec=None`` the target is the angle of ``b_hat`` and ``a_vec`` is
    its delta-method gradient; otherwise the target is ``a_vec' b_hat``.
    """
    if not 0 < level < 1:
        raise DomainError(f"level must be in (0, 1), got {level}")
    b_hat = np.asarray(fit_result.b_hat, dtype=float)
    label, est, a = _resolve_target("angle" if a_vec is None else a_vec, b_hat)
    var = float(a @ sw.V_hat @ a)
    if not var > 0:
        raise DegenerateVarianceError(f"a'Va = {var:.3e} is not positive")
    se = math.sqrt(var / fit_result.n)
    half = norm.ppf(0.5 + level / 2) * se
    return CiReport(est, se, est - half, est + half, level, "normal", label)


def percentile_t_interval(estimate: float, sigma: float, n: int, t_stats, level: float) -> tuple[float, float]:
    """``[est - q_hi * sigma/sqrt(n), est - q_lo * sigma/sqrt(n)]`` from bootstrap t statistics.

    Quantiles use linear interpolation between order statistics (type 7).
    """
    alpha = 1.0 - level
    q_lo, q_hi = np.quantile(np.asarray(t_stats, dtype=float), [alpha / 2, 1 - alpha / 2])
    scale = sigma / math.sqrt(n)
    return estimate - q_hi * scale, estimate - q_lo * scale


@dataclass
class BootstrapDraws:
    b: np.ndarray        # (S, d) accepted refits
    V: np.ndarray        # (S, d, d) sandwich at each refit
    rejections: int


def _batch_sandwich(H: np.ndarray, omega: np.ndarray):
    """Sandwich matrices for a stack of fits; rows whose Hessian fails the guard are flagged."""
    K, d, _ = H.shape
    good = np.zeros(K, dtype=bool)
    V = np.full((K, d, d), np.nan)
    finite = np.all(np.isfinite(H), axis=(1, 2)) & np.all(np.isfinite(omega), axis=(1, 2))
    rows = np.flatnonzero(finite)
    if rows.size == 0:
        return V, good
    ev = np.linalg.eigvalsh(H[rows])
    ok = (ev[:, -1] < 0) & (ev[:, 0] / np.where(ev[:, -1] < 0, ev[:, -1], -1.0) <= MAX_CONDITION)
    rows = rows[ok]
    if rows.size:
        hinv = np.linalg.inv(H[rows])
        Vr = hinv @ omega[rows] @ hinv
        V[rows] = 0.5 * (Vr + np.swapaxes(Vr, 1, 2))
        good[rows] = True
    return V, good


def _fit_resamples(z, y, idx, spec, b_hat, opts):
    S, n = idx.shape
    d = z.shape[1]
    block = max(1, _BLOCK_CELLS // max(n, 1))
    b_out = np.empty((S, d))
    V_out = np.empty((S, d, d))
    good = np.zeros(S, dtype=bool)
    for lo in range(0, S, block):
        sl = slice(lo, min(S, lo + block))
        ii = idx[sl]
        ys = y[ii].sum(axis=1)
        two_class = (ys > 0) & (ys < n)
        res = fit_batch(z[ii], spec, b_hat, opts)
        V, vgood = _batch_sandwich(res.hess, res.omega)
        b_out[sl] = res.b
        V_out[sl] = V
        good[sl] = two_class & res.ok & vgood
    return b_out, V_out, good


def _collect_resamples(dataset: Dataset, S: int, seed, fit_block):
    """Draw and fit ``S`` accepted resamples.

    ``fit_block(idx)`` fits the resamples given by the rows of ``idx`` and
    returns ``(arrays, good)``: per-row result arrays and an acceptance mask.
    Resample ``s`` is row ``s`` of an ``(S, n)`` index matrix drawn from the
    seed's first child stream, so it does not depend on how the work is split.
    Rejected resamples are replaced in order from the second child stream.
    """
    if S < 1:
        raise DomainError(f"S must be positive, got {S}")
    n = dataset.n
    main_ss, redraw_ss = np.random.SeedSequence(_seed_tuple(seed)).spawn(2)
    idx = np.random.Generator(np.random.PCG64(main_ss)).integers(0, n, size=(S, n))
    arrays, good = fit_block(idx)
    kept = [[a[good]] for a in arrays]
    have = int(good.sum())
    rejections = S - have
    limit = MAX_REJECT_FRACTION * S
    redraw = np.random.Generator(np.random.PCG64(redraw_ss))
    while have < S:
        if rejections > limit:
            break
        need = S - have
        idx = redraw.integers(0, n, size=(need, n))
        arrays, good = fit_block(idx)
        for store, a in zip(kept, arrays):
            store.append(a[good])
        have += int(good.sum())
        rejections += need - int(good.sum())
    if rejections > limit:
        raise BootstrapInstabilityError(
            f"{rejections} of {S} bootstrap resamples rejected (limit {MAX_REJECT_FRACTION:.0%})"
        )
    return [np.concatenate(store) for store in kept], rejections


def bootstrap_fits(
    dataset: Dataset,
    spec: LossSpec,
    b_hat,
    S: int,
    seed,
    opts: FitOptions | None = None,
) -> BootstrapDraws:
    """Refit ``S`` nonparametric resamples, replacing degenerate ones.

    Rejected resamples are those with one outcome class, a boundary or
    failed refit, or a Hessian that fails the conditioning guard.
    """
    opts = opts or FitOptions()
    b_hat = np.asarray(b_hat, dtype=float)
    z = dataset.signed_x()
    y = dataset.y

    def fit_block(idx):
        b, V, good = _fit_resamples(z, y, idx, spec, b_hat, opts)
        return (b, V), good

    (b, V), rejections = _collect_resamples(dataset, S, seed, fit_block)
    return BootstrapDraws(b, V, rejections)


def bootstrap_t_stats(draws: BootstrapDraws, target: Target, b_hat, n: int) -> np.ndarray:
    """Studentized statistics ``sqrt(n) (theta* - theta_hat) / sigma*`` for each refit."""
    b_hat = np.asarray(b_hat, dtype=float)
    _, est, _ = _resolve_target(target, b_hat)
    if isinstance(target, str):
        bs = draws.b
        nb2 = np.einsum("kd,kd->k", bs, bs)
        grads = np.stack([-bs[:, 1], bs[:, 0]], axis=1) / nb2[:, None]
        diff = wrap_angle(np.arctan2(bs[:, 1], bs[:, 0]) - est)
    else:
        a = np.asarray(target, dtype=float)
        grads = np.broadcast_to(a, draws.b.shape)
        diff = draws.b @ a - est
    var = np.einsum("ki,kij,kj->k", grads, draws.V, grads)
    if not np.all(var > 0):
        raise DegenerateVarianceError("a bootstrap variance estimate is not positive")
    return math.sqrt(n) * diff / np.sqrt(var)


def bootstrap_studentized(
    dataset: Dataset,
    spec: LossSpec,
    opts: FitOptions | None = None,
    target: Target = "angle",
    S: int = 999,
    level: float = 0.95,
    seed=0,
    fit_result: FitResult | None = None,
    sw: SandwichEstimate | None = None,
) -> CiReport:
    """Percentile-t bootstrap interval for a scalar target.

    ``fit_result`` and ``sw`` may be passed to reuse an existing fit of
    ``dataset``; they are computed otherwise.
    """
    return bootstrap_studentized_many(dataset, spec, opts, [target], S, level, seed, fit_result, sw)[0]


def bootstrap_studentized_many(
    dataset: Dataset,
    spec: LossSpec,
    opts: FitOptions | None,
    targets: Sequence[Target],
    S: int = 999,
    level: float = 0.95,
    seed=0,
    fit_result: FitResult | None = None,
    sw: SandwichEstimate | None = None,
) -> list[CiReport]:
    """Several targets from one set of bootstrap refits."""
    if S < 99:
        raise DomainError(f"the bootstrap needs S >= 99 resamples, got {S}")
    if not 0 < level < 1:
        raise DomainError(f"level must be in (0, 1), got {level}")
    opts = opts or FitOptions()
    if fit_result is None:
        fit_result = fit(dataset, spec, opts)
    if fit_result.on_boundary:
        raise DomainError("the bootstrap needs an interior fit; the estimate is on the boundary")
    if sw is None:
        sw = sandwich(dataset, spec, fit_result.b_hat)
    draws = bootstrap_fits(dataset, spec, fit_result.b_hat, S, seed, opts)
    out = []
    for target in targets:
        label, est, a = _resolve_target(target, fit_result.b_hat)
        var = float(a @ sw.V_hat @ a)
        if not var > 0:
            raise DegenerateVarianceError(f"a'Va = {var:.3e} is not positive")
        sigma = math.sqrt(var)
        t_stats = bootstrap_t_stats(draws, target, fit_result.b_hat, dataset.n)
        lo, hi = percentile_t_interval(est, sigma, dataset.n, t_stats, level)
        out.append(
            CiReport(
                est,
                sigma / math.sqrt(dataset.n),
                lo,
                hi,
                level,
                "studentized_bootstrap",
                label,
                boot_draws=S,
                rejections=draws.rejections,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Inference for the unit-norm angle fit.


@dataclass(frozen=True)
class AngleSandwich:
    """Scalar sandwich for ``sqrt(n) (theta_hat - theta)``."""

    H_hat: float
    Omega_hat: float
    V_hat: float

    def to_dict(self) -> dict:
        return {"H_hat": self.H_hat, "Omega_hat": self.Omega_hat, "V_hat": self.V_hat}


def _angle_scores(z: np.ndarray, spec: LossSpec, theta: float):
    c, s = math.cos(theta), math.sin(theta)
    u = z[:, 0] * c + z[:, 1] * s
    w = z[:, 1] * c - z[:, 0] * s
    _, d1, d2 = phi_derivs(spec, u)
    return d1 * w, float((d2 * w * w - d1 * u).mean())


def sandwich_angle(dataset: Dataset, spec: LossSpec, theta_hat: float) -> AngleSandwich:
    """Plug-in asymptotic variance of the unit-norm angle estimator."""
    if dataset.d != 2:
        raise DomainError("the angle sandwich needs exactly two regressors")
    psi, h = _angle_scores(dataset.signed_x(), spec, float(theta_hat))
    if not h < 0:
        raise IllConditionedError(f"curvature {h:.3e} in theta is not negative", condition_number=math.inf)
    omega = float(np.mean(psi * psi))
    if not omega > 0:
        raise DegenerateVarianceError(f"mean squared theta score {omega:.3e} is not positive")
    return AngleSandwich(h, omega, omega / (h * h))


def ci_normal_angle(fit_result: AngleFit, sw: AngleSandwich, level: float = 0.95) -> CiReport:
    """``theta_hat +/- z * sqrt(V / n)`` for the unit-norm angle fit."""
    if not 0 < level < 1:
        raise DomainError(f"level must be in (0, 1), got {level}")
    if not sw.V_hat > 0:
        raise DegenerateVarianceError(f"variance {sw.V_hat:.3e} is not positive")
    est = fit_result.theta_hat
    se = math.sqrt(sw.V_hat / fit_result.n)
    half = norm.ppf(0.5 + level / 2) * se
    return CiReport(est, se, est - half, est + half, level, "normal", "angle")


def bootstrap_angle_draws(
    dataset: Dataset,
    spec: LossSpec,
    theta_hat: float,
    S: int,
    seed,
    grad_tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Angle refits and their scalar sandwich variances for ``S`` resamples.

    Refits start from ``theta_hat``.  Resamples with one outcome class or a
    refit that is not a strict maximum are rejected and redrawn.
    """
    z = dataset.signed_x()
    y = dataset.y
    n = dataset.n
    block = max(1, _BLOCK_CELLS // max(n, 1))

    def fit_block(idx):
        K = idx.shape[0]
        theta = np.empty(K)
        var = np.empty(K)
        good = np.zeros(K, dtype=bool)
        for lo in range(0, K, block):
            sl = slice(lo, min(K, lo + block))
            ii = idx[sl]
            ys = y[ii].sum(axis=1)
            res = fit_angle_batch(z[ii], spec, theta_hat, grad_tol=grad_tol)
            with np.errstate(divide="ignore", invalid="ignore"):
                v = res.omega / res.curvature**2
            theta[sl] = res.theta
            var[sl] = v
            good[sl] = (ys > 0) & (ys < n) & res.ok & np.isfinite(v) & (v > 0)
        return (theta, var), good

    (theta, var), rejections = _collect_resamples(dataset, S, seed, fit_block)
    return theta, var, rejections


def bootstrap_angle(
    dataset: Dataset,
    spec: LossSpec,
    S: int = 999,
    level: float = 0.95,
    seed=0,
    fit_result: AngleFit | None = None,
    sw: AngleSandwich | None = None,
    grad_tol: float = 1e-10,
) -> CiReport:
    """Percentile-t bootstrap interval for the unit-norm angle fit."""
    if S < 99:
        raise DomainError(f"the bootstrap needs S >= 99 resamples, got {S}")
    if not 0 < level < 1:
        raise DomainError(f"level must be in (0, 1), got {level}")
    if fit_result is None:
        fit_result = fit_angle(dataset, spec, grad_tol=grad_tol)
    if sw is None:
        sw = sandwich_angle(dataset, spec, fit_result.theta_hat)
    est = fit_result.theta_hat
    theta, var, rejections = bootstrap_angle_draws(dataset, spec, est, S, seed, grad_tol)
    n = dataset.n
    t_stats = math.sqrt(n) * wrap_angle(theta - est) / np.sqrt(var)
    sigma = math.sqrt(sw.V_hat)
    lo, hi = percentile_t_interval(est, sigma, n, t_stats, level)
    return CiReport(
        est,
        sigma / math.sqrt(n),
        lo,
        hi,
        level,
        "studentized_bootstrap",
        "angle",
        boot_draws=S,
        rejections=rejections,
    )
