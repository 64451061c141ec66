"""Surrogate maximum score estimation.

The estimator maximizes the sample mean of ``y*phi(x'b) + (1-y)*phi(-x'b)``
over the ball ``||b|| <= R``.  The objective is smooth and concave, so a
damped Newton method converges globally; iterates that leave the ball are
projected back, and once the solution sits on the sphere the remaining
steps are Newton steps along the sphere.

For two regressors there is also the unit-norm estimator: the angle
``theta`` maximizing the objective at ``b(theta) = (cos theta, sin theta)``.
Scale is not identified in the binary choice model, so fixing ``||b|| = 1``
loses nothing; the scale ``a`` of the loss then sets how sharply the
surrogate approximates the score.  This is the estimator behind the
Monte Carlo tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dgp import Dataset
from .errors import DegenerateDataError, DomainError, IterationLimitError, ShapeError
from .loss import LossSpec, phi_derivs

ARMIJO = 1e-4
MAX_HALVINGS = 60
RANK_TOL = 1e-10
BOUNDARY_RTOL = 1e-9


@dataclass(frozen=True)
class FitOptions:
    radius: float = 100.0
    grad_tol: float = 1e-10
    max_iter: int = 200
    init: Optional[tuple] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError(f"radius must be positive, got {self.radius}")
        if not self.grad_tol > 0:
            raise DomainError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.max_iter < 1:
            raise DomainError(f"max_iter must be at least 1, got {self.max_iter}")


@dataclass
class FitResult:
    """Maximizer of the sample surrogate objective.

    ``grad_norm`` is the first-order optimality residual: the gradient norm
    for an interior solution, its component tangent to the sphere when the
    solution is on the boundary.
    """

    b_hat: np.ndarray
    objective: float
    grad_norm: float
    iterations: int
    on_boundary: bool
    direction: np.ndarray
    theta_hat: Optional[float]
    n: int
    loss: LossSpec
    radius: float
    warnings: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "b_hat": self.b_hat.tolist(),
            "direction": self.direction.tolist(),
            "theta_hat": self.theta_hat,
            "objective": self.objective,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "on_boundary": self.on_boundary,
            "radius": self.radius,
            "n": self.n,
            "loss": self.loss.kind.value,
            "a": self.loss.a,
            "warnings": list(self.warnings),
        }


def _moments(spec: LossSpec, z: np.ndarray, b: np.ndarray):
    value, d1, d2 = phi_derivs(spec, z @ b)
    n = z.shape[0]
    q = float(value.sum() / n)
    g = z.T @ d1 / n
    h = (z * d2[:, None]).T @ z / n
    return q, g, 0.5 * (h + h.T)


def objective(dataset: Dataset, spec: LossSpec, b) -> tuple[float, np.ndarray, np.ndarray]:
    """Sample surrogate objective with its gradient and Hessian at ``b``."""
    b = np.asarray(b, dtype=float)
    if b.shape != (dataset.d,):
        raise ShapeError(f"b must have shape ({dataset.d},), got {b.shape}")
    return _moments(spec, dataset.signed_x(), b)


def check_identifiable(dataset: Dataset) -> None:
    """Reject data the estimator cannot handle: one class, n <= d, collinear columns."""
    n, d = dataset.n, dataset.d
    if n < d + 1:
        raise DegenerateDataError(f"need at least d + 1 = {d + 1} observations, got {n}")
    ones = int(dataset.y.sum())
    if ones == 0 or ones == n:
        raise DegenerateDataError("only one outcome class present; both y = 0 and y = 1 are required")
    ev = np.linalg.eigvalsh(dataset.x.T @ dataset.x / n)
    if ev[-1] <= 0 or ev[0] <= RANK_TOL * ev[-1]:
        raise DegenerateDataError("regressor columns are collinear (second-moment matrix is rank deficient)")


def _project(b: np.ndarray, radius: float) -> np.ndarray:
    nb = np.linalg.norm(b)
    return b if nb <= radius else b * (radius / nb)


def _ascent_direction(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Newton direction ``-H^{-1} g`` with a tiny ridge if ``-H`` is numerically singular."""
    neg = -h
    scale = np.trace(neg) / len(g)
    if not scale > 0:
        return g.copy()
    for ridge in (0.0, 1e-12, 1e-9, 1e-6):
        try:
            c = np.linalg.cholesky(neg + ridge * scale * np.eye(len(g)))
        except np.linalg.LinAlgError:
            continue
        return np.linalg.solve(c.T, np.linalg.solve(c, g))
    return g / scale


def _sphere_direction(b, g, h):
    """Newton direction for maximizing along the sphere ``||b|| = ||b_current||``."""
    d = len(b)
    nb2 = b @ b
    mu = (g @ b) / nb2
    p = np.eye(d) - np.outer(b, b) / nb2
    rg = p @ g
    # Tangent-space Hessian of the Lagrangian; the normal direction gets -1
    # so the system is negative definite and the step stays tangent.
    m = p @ (h - mu * np.eye(d)) @ p - np.outer(b, b) / nb2
    try:
        step = np.linalg.solve(m, -rg)
    except np.linalg.LinAlgError:
        step = rg
    step = p @ step
    if rg @ step <= 0:
        step = rg
    return rg, step


def fit(dataset: Dataset, spec: LossSpec, opts: FitOptions | None = None) -> FitResult:
    """Maximize the sample surrogate objective over ``||b|| <= opts.radius``.

    Raises DegenerateDataError for data that cannot identify ``b`` and
    IterationLimitError if ``opts.max_iter`` steps do not reach optimality.
    """
    opts = opts or FitOptions()
    check_identifiable(dataset)
    z = dataset.signed_x()
    d = dataset.d
    radius = float(opts.radius)
    b = np.zeros(d) if opts.init is None else np.asarray(opts.init, dtype=float)
    if b.shape != (d,):
        raise ShapeError(f"init must have shape ({d},), got {b.shape}")
    b = _project(b, radius)

    q, g, h = _moments(spec, z, b)
    trace = [q]
    converged = False
    residual = math.inf
    it = 0
    while True:
        nb = np.linalg.norm(b)
        on_sphere = nb >= radius * (1 - BOUNDARY_RTOL) and g @ b > 0
        if on_sphere:
            rg, step = _sphere_direction(b, g, h)
            residual = float(np.linalg.norm(rg))
        else:
            residual = float(np.linalg.norm(g))
        if residual <= opts.grad_tol:
            if not on_sphere and 0 < nb < radius * (1 - BOUNDARY_RTOL) and np.all(z @ b > 0):
                # Every margin is positive, so Q increases along the ray and the
                # small gradient is underflow, not optimality: move to the sphere.
                b = b * (radius / nb)
                q, g, h = _moments(spec, z, b)
                trace.append(q)
                continue
            converged = True
            break
        if it >= opts.max_iter:
            break
        it += 1

        if not on_sphere:
            step = _ascent_direction(g, h)
        slope = float((rg if on_sphere else g) @ step)
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            trial = b + t * step
            if on_sphere:
                trial = trial * (radius / np.linalg.norm(trial))
            else:
                trial = _project(trial, radius)
            q_new, g_new, h_new = _moments(spec, z, trial)
            if q_new >= q + ARMIJO * float(g @ (trial - b)):
                accepted = True
                break
            # Past this point objective differences are below rounding.
            if t == 1.0 and slope <= 1e-13 * (1.0 + abs(q)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            raise IterationLimitError(
                f"line search failed at iteration {it} (residual {residual:.3e})", last_iterate=b
            )
        b, q, g, h = trial, q_new, g_new, h_new
        trace.append(q)

    if not converged:
        raise IterationLimitError(
            f"no convergence in {opts.max_iter} iterations (residual {residual:.3e})",
            last_iterate=b,
        )

    nb = float(np.linalg.norm(b))
    on_boundary = nb >= radius * (1 - BOUNDARY_RTOL)
    warnings = []
    if on_boundary:
        warnings.append(
            f"solution lies on the boundary ||b|| = {radius:g}; the data may be perfectly "
            "separated, in which case the maximizer is at infinity"
        )
    if nb > 0:
        direction = b / nb
    else:
        direction = np.zeros(d)
    theta = math.atan2(b[1], b[0]) if d == 2 and nb > 0 else None
    return FitResult(
        b_hat=b,
        objective=q,
        grad_norm=residual,
        iterations=it,
        on_boundary=bool(on_boundary),
        direction=direction,
        theta_hat=theta,
        n=dataset.n,
        loss=spec,
        radius=radius,
        warnings=warnings,
        trace=trace,
    )


def angle_of(b) -> tuple[float, np.ndarray]:
    """Angle ``atan2(b2, b1)`` and its gradient ``(-b2, b1)/||b||^2``."""
    b = np.asarray(b, dtype=float)
    if b.shape != (2,):
        raise ShapeError(f"angle_of needs a 2-vector, got shape {b.shape}")
    nb2 = float(b @ b)
    if nb2 == 0.0:
        raise DomainError("the angle of the zero vector is undefined")
    return math.atan2(b[1], b[0]), np.array([-b[1], b[0]]) / nb2


def wrap_angle(x):
    """Map angle differences into [-pi, pi)."""
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# Batched fits over many weightings of one dataset (bootstrap workhorse).


@dataclass
class BatchFit:
    b: np.ndarray          # (K, d)
    ok: np.ndarray         # (K,) converged at an interior point
    hess: np.ndarray       # (K, d, d)
    omega: np.ndarray      # (K, d, d) mean outer product of scores
    iterations: int


def _pair_index(d):
    return [(i, j) for i in range(d) for j in range(i, d)]


def _batch_moments(spec, Z, P, B, pairs):
    u = np.einsum("knd,kd->kn", Z, B)
    value, d1, d2 = phi_derivs(spec, u.ravel())
    K, n, d = Z.shape
    value = value.reshape(K, n)
    d1 = d1.reshape(K, n)
    d2 = d2.reshape(K, n)
    q = value.mean(axis=1)
    g = np.einsum("kn,knd->kd", d1, Z) / n
    hp = np.einsum("kn,knp->kp", d2, P) / n
    H = np.empty((K, d, d))
    for p, (i, j) in enumerate(pairs):
        H[:, i, j] = hp[:, p]
        H[:, j, i] = hp[:, p]
    op = np.einsum("kn,knp->kp", d1 * d1, P) / n
    omega = np.empty((K, d, d))
    for p, (i, j) in enumerate(pairs):
        omega[:, i, j] = op[:, p]
        omega[:, j, i] = op[:, p]
    return q, g, H, omega


def fit_batch(Z: np.ndarray, spec: LossSpec, init: np.ndarray, opts: FitOptions | None = None) -> BatchFit:
    """Fit ``K`` problems at once, problem ``k`` having signed regressors ``Z[k]``.

    Only interior solutions count as success; a problem whose iterate reaches
    the sphere, whose Hessian is not negative definite, or that does not
    converge within ``opts.max_iter`` steps is returned with ``ok = False``.
    """
    opts = opts or FitOptions()
    K, n, d = Z.shape
    pairs = _pair_index(d)
    P = np.stack([Z[..., i] * Z[..., j] for i, j in pairs], axis=-1)
    radius = opts.radius
    B = np.array(np.broadcast_to(init, (K, d)), dtype=float)
    q, g, H, omega = _batch_moments(spec, Z, P, B, pairs)
    active = np.ones(K, dtype=bool)
    failed = np.zeros(K, dtype=bool)
    it = 0
    while True:
        gn = np.linalg.norm(g, axis=1)
        active &= ~failed & (gn > opts.grad_tol)
        if not active.any() or it >= opts.max_iter:
            break
        it += 1
        idx = np.flatnonzero(active)
        try:
            step = -np.linalg.solve(H[idx], g[idx][..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.empty((idx.size, d))
            for k, i in enumerate(idx):
                step[k] = _ascent_direction(g[i], H[i])
        slope = np.einsum("kd,kd->k", g[idx], step)
        bad = ~(slope > 0)
        if bad.any():
            step[bad] = g[idx][bad]
            slope[bad] = np.einsum("kd,kd->k", g[idx][bad], g[idx][bad])
        t = np.ones(idx.size)
        pending = np.arange(idx.size)
        for _ in range(MAX_HALVINGS):
            if pending.size == 0:
                break
            rows = idx[pending]
            trial = B[rows] + t[pending, None] * step[pending]
            qn, gn_, Hn, On = _batch_moments(spec, Z[rows], P[rows], trial, pairs)
            ok = (qn >= q[rows] + ARMIJO * t[pending] * slope[pending]) | (
                (t[pending] == 1.0) & (slope[pending] <= 1e-13 * (1.0 + np.abs(q[rows])))
            )
            acc = rows[ok]
            B[acc], q[acc], g[acc], H[acc], omega[acc] = trial[ok], qn[ok], gn_[ok], Hn[ok], On[ok]
            pending = pending[~ok]
            t[pending] *= 0.5
        failed[idx[pending]] = True
        failed |= np.linalg.norm(B, axis=1) > radius
    gn = np.linalg.norm(g, axis=1)
    ok = ~failed & (gn <= opts.grad_tol)
    return BatchFit(b=B, ok=ok, hess=H, omega=omega, iterations=it)


# ---------------------------------------------------------------------------
# Unit-norm (angle) estimator for two regressors.

ANGLE_GRID = 64
_MAX_ANGLE_STEP = math.pi / 8


@dataclass
class AngleFit:
    """Maximizer over the unit circle.

    ``score`` and ``curvature`` are the first and second derivatives of the
    objective in ``theta`` at ``theta_hat``.
    """

    theta_hat: float
    b_hat: np.ndarray
    objective: float
    score: float
    curvature: float
    iterations: int
    n: int
    loss: LossSpec
    trace: list = field(default_factory=list)

    @property
    def direction(self) -> np.ndarray:
        return self.b_hat

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat,
            "b_hat": self.b_hat.tolist(),
            "objective": self.objective,
            "score": self.score,
            "curvature": self.curvature,
            "iterations": self.iterations,
            "n": self.n,
            "loss": self.loss.kind.value,
            "a": self.loss.a,
        }


def _angle_parts(spec: LossSpec, z: np.ndarray, theta: float):
    c, s = math.cos(theta), math.sin(theta)
    u = z[:, 0] * c + z[:, 1] * s
    w = z[:, 1] * c - z[:, 0] * s
    value, d1, d2 = phi_derivs(spec, u)
    return u, w, value, d1, d2


def _angle_moments(spec, z, theta):
    u, w, value, d1, d2 = _angle_parts(spec, z, theta)
    return float(value.mean()), float((d1 * w).mean()), float((d2 * w * w - d1 * u).mean())


def angle_objective(dataset: Dataset, spec: LossSpec, theta: float) -> tuple[float, float, float]:
    """Objective at ``b(theta)`` with its first and second ``theta`` derivatives."""
    if dataset.d != 2:
        raise ShapeError(f"the angle parameterization needs two regressors, got d = {dataset.d}")
    return _angle_moments(spec, dataset.signed_x(), float(theta))


def _angle_step(dq: float, d2q: float) -> float:
    step = -dq / d2q if d2q < 0 else dq
    return max(-_MAX_ANGLE_STEP, min(_MAX_ANGLE_STEP, step))


def fit_angle(
    dataset: Dataset,
    spec: LossSpec,
    init: float | None = None,
    grad_tol: float = 1e-10,
    max_iter: int = 100,
) -> AngleFit:
    """Maximize the sample objective over ``b(theta) = (cos theta, sin theta)``.

    The objective is not concave in ``theta``, so without ``init`` Newton
    starts from the best of ``ANGLE_GRID`` equally spaced angles.  Raises
    DegenerateDataError if the stationary point found is not a strict
    maximum and IterationLimitError if ``max_iter`` steps do not converge.
    """
    if dataset.d != 2:
        raise ShapeError(f"the angle parameterization needs two regressors, got d = {dataset.d}")
    check_identifiable(dataset)
    z = dataset.signed_x()
    if init is None:
        grid = np.linspace(-math.pi, math.pi, ANGLE_GRID, endpoint=False)
        vals = phi_derivs(spec, z @ np.stack([np.cos(grid), np.sin(grid)]))[0].mean(axis=0)
        theta = float(grid[np.argmax(vals)])
    else:
        theta = float(init)
    q, dq, d2q = _angle_moments(spec, z, theta)
    trace = [q]
    it = 0
    while abs(dq) > grad_tol:
        if it >= max_iter:
            raise IterationLimitError(
                f"no convergence in {max_iter} iterations (|dQ/dtheta| = {abs(dq):.3e})",
                last_iterate=np.array([math.cos(theta), math.sin(theta)]),
            )
        it += 1
        step = _angle_step(dq, d2q)
        t = 1.0
        for _ in range(MAX_HALVINGS):
            trial = theta + t * step
            q_new, dq_new, d2q_new = _angle_moments(spec, z, trial)
            if q_new >= q + ARMIJO * t * step * dq or (t == 1.0 and abs(step * dq) <= 1e-13 * (1.0 + abs(q))):
                break
            t *= 0.5
        else:
            raise IterationLimitError(
                f"line search failed at iteration {it} (|dQ/dtheta| = {abs(dq):.3e})",
                last_iterate=np.array([math.cos(theta), math.sin(theta)]),
            )
        theta, q, dq, d2q = trial, q_new, dq_new, d2q_new
        trace.append(q)
    if not d2q < 0:
        raise DegenerateDataError(
            f"stationary angle is not a strict maximum (second derivative {d2q:.3e})"
        )
    theta = float(wrap_angle(theta))
    if theta == -math.pi:
        theta = math.pi
    return AngleFit(
        theta_hat=theta,
        b_hat=np.array([math.cos(theta), math.sin(theta)]),
        objective=q,
        score=dq,
        curvature=d2q,
        iterations=it,
        n=dataset.n,
        loss=spec,
        trace=trace,
    )


@dataclass
class AngleBatch:
    theta: np.ndarray      # (K,)
    ok: np.ndarray         # (K,) converged to a strict maximum
    curvature: np.ndarray  # (K,) second derivative in theta
    omega: np.ndarray      # (K,) mean squared per-observation theta score
    iterations: int


def _angle_batch_moments(spec, Z, theta):
    c = np.cos(theta)[:, None]
    s = np.sin(theta)[:, None]
    u = Z[..., 0] * c + Z[..., 1] * s
    w = Z[..., 1] * c - Z[..., 0] * s
    value, d1, d2 = phi_derivs(spec, u.ravel())
    shape = u.shape
    value, d1, d2 = value.reshape(shape), d1.reshape(shape), d2.reshape(shape)
    psi = d1 * w
    return (
        value.mean(axis=1),
        psi.mean(axis=1),
        (d2 * w * w - d1 * u).mean(axis=1),
        (psi * psi).mean(axis=1),
    )


def fit_angle_batch(
    Z: np.ndarray,
    spec: LossSpec,
    init,
    grad_tol: float = 1e-10,
    max_iter: int = 100,
) -> AngleBatch:
    """Angle fits for ``K`` problems with signed regressors ``Z[k]`` of shape (n, 2).

    Newton starts from ``init`` (scalar or one angle per problem) without a
    grid search, so it finds the maximum of the basin containing ``init``.
    """
    K = Z.shape[0]
    theta = np.array(np.broadcast_to(np.asarray(init, dtype=float), (K,)))
    q, dq, d2q, omega = _angle_batch_moments(spec, Z, theta)
    failed = np.zeros(K, dtype=bool)
    it = 0
    while True:
        active = ~failed & (np.abs(dq) > grad_tol)
        if not active.any() or it >= max_iter:
            break
        it += 1
        idx = np.flatnonzero(active)
        step = np.where(d2q[idx] < 0, -dq[idx] / np.where(d2q[idx] < 0, d2q[idx], -1.0), dq[idx])
        step = np.clip(step, -_MAX_ANGLE_STEP, _MAX_ANGLE_STEP)
        slope = step * dq[idx]
        t = np.ones(idx.size)
        pending = np.arange(idx.size)
        for _ in range(MAX_HALVINGS):
            if pending.size == 0:
                break
            rows = idx[pending]
            trial = theta[rows] + t[pending] * step[pending]
            qn, dqn, d2qn, on = _angle_batch_moments(spec, Z[rows], trial)
            ok = (qn >= q[rows] + ARMIJO * t[pending] * slope[pending]) | (
                (t[pending] == 1.0) & (np.abs(slope[pending]) <= 1e-13 * (1.0 + np.abs(q[rows])))
            )
            acc = rows[ok]
            theta[acc], q[acc], dq[acc], d2q[acc], omega[acc] = trial[ok], qn[ok], dqn[ok], d2qn[ok], on[ok]
            pending = pending[~ok]
            t[pending] *= 0.5
        failed[idx[pending]] = True
    ok = ~failed & (np.abs(dq) <= grad_tol) & (d2q < 0)
    return AngleBatch(theta=theta, ok=ok, curvature=d2q, omega=omega, iterations=it)
