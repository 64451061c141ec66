"""Surrogate score functions.

Each surrogate score is the negative of a strictly convex, strictly
decreasing loss, ``phi(u) = -loss(u)``:

* logistic:      phi(u) = -log(1 + exp(-a u)) / a
* pseudo-Huber:  phi(u) = u - sqrt(a**2 + u**2)
* probit:        phi(u) = log Phi(a u)

All evaluators are vectorized and stay finite far into the tails, where
the textbook formulas overflow or cancel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import erfc, erfcx

from .errors import ConfigError, ShapeError

ArrayLike = Union[float, np.ndarray]

_SQRT2 = np.sqrt(2.0)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
# Below this index the probit curvature uses a continued fraction instead
# of t + r(t), which cancels catastrophically.
_PROBIT_CF_SWITCH = -5.0
_PROBIT_CF_TERMS = 120


class LossKind(str, enum.Enum):
    LOGISTIC = "logistic"
    HUBER = "huber"
    PROBIT = "probit"


DEFAULT_SCALE = {
    LossKind.LOGISTIC: 1.0,
    LossKind.HUBER: 2.0,
    LossKind.PROBIT: 0.5,
}


@dataclass(frozen=True)
class LossSpec:
    """Which surrogate score to use and its scale ``a`` (``a > 0``)."""

    kind: LossKind
    a: float

    def __post_init__(self):
        try:
            kind = LossKind(self.kind)
        except ValueError:
            supported = ", ".join(k.value for k in LossKind)
            raise ConfigError(
                f"unknown loss {self.kind!r}; supported: {supported}"
            ) from None
        object.__setattr__(self, "kind", kind)
        a = float(self.a)
        if not np.isfinite(a) or a <= 0:
            raise ConfigError(f"loss scale a must be positive and finite, got {self.a!r}")
        object.__setattr__(self, "a", a)

    @classmethod
    def from_name(cls, name: str, a: float | None = None) -> "LossSpec":
        """Build a spec from its CLI name, using the default scale if ``a`` is None."""
        try:
            kind = LossKind(name)
        except ValueError:
            supported = ", ".join(k.value for k in LossKind)
            raise ConfigError(f"unknown loss {name!r}; supported: {supported}") from None
        return cls(kind, DEFAULT_SCALE[kind] if a is None else a)

    @property
    def label(self) -> str:
        return f"{self.kind.value}(a={self.a:g})"


@dataclass(frozen=True)
class PhiEval:
    value: ArrayLike
    d1: ArrayLike
    d2: ArrayLike


def _logistic(a, u):
    t = a * u
    e = np.exp(-np.abs(t))
    softplus = np.maximum(-t, 0.0) + np.log1p(e)
    value = -softplus / a
    d1 = np.where(t >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    d2 = -a * e / (1.0 + e) ** 2
    return value, d1, d2


def _huber(a, u):
    h = np.hypot(a, u)
    pos = u >= 0
    # u - h cancels for large positive u; use the conjugate form there.
    with np.errstate(divide="ignore", over="ignore"):
        value = np.where(pos, -(a * a) / (u + h), u - h)
        d1 = np.where(pos, (a * a) / (h * (u + h)), 1.0 - u / h)
    d2 = -((a / h) ** 2) / h
    return value, d1, d2


def _probit_cf(s):
    """t + r(t) at t = -s for s >= 5, by the Laplace continued fraction."""
    tail = np.zeros_like(s)
    for k in range(_PROBIT_CF_TERMS, 1, -1):
        tail = k / (s + tail)
    return 1.0 / (s + tail)


def _probit_far(t):
    """Value, r(t) and t + r(t) for t < _PROBIT_CF_SWITCH, in the scaled domain."""
    x = -t / _SQRT2
    with np.errstate(over="ignore"):
        ex = erfcx(x)
        # x**2 overflows only once |t| > ~1.9e154, where log Phi itself
        # is below -DBL_MAX.
        value = np.log(0.5 * ex) - x * x
    return value, _SQRT_2_OVER_PI / ex, _probit_cf(-t)


def _probit(a, u):
    t = a * u
    pos = t >= 0
    # Upper tail mass beyond |t|; erfc keeps full relative accuracy there.
    q = 0.5 * erfc(np.abs(t) / _SQRT2)
    with np.errstate(over="ignore"):
        # t*t overflows only where the density is exactly 0 anyway.
        pdf = np.exp(-0.5 * t * t) * (_SQRT_2_OVER_PI / 2.0)
    cdf = np.where(pos, 1.0 - q, q)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(pos, np.log1p(-q), np.log(q))
        # r(t) = pdf(t) / cdf(t), the inverse Mills ratio.
        r = pdf / cdf
    margin = t + r
    far = t < _PROBIT_CF_SWITCH
    if np.any(far):
        value[far], r[far], margin[far] = _probit_far(t[far])
    d1 = a * r
    d2 = -(a * a) * r * margin
    return value, d1, d2


_EVALUATORS = {
    LossKind.LOGISTIC: _logistic,
    LossKind.HUBER: _huber,
    LossKind.PROBIT: _probit,
}


def phi_derivs(spec: LossSpec, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, first and second derivative of phi at ``u`` as plain arrays.

    This is the hot path used by the optimizers; ``u`` must be a float array.
    """
    return _EVALUATORS[spec.kind](spec.a, np.atleast_1d(u))


def eval_phi(spec: LossSpec, u: ArrayLike) -> PhiEval:
    """Evaluate ``phi(u)``, ``phi'(u)`` and ``phi''(u)``.

    Scalars in give scalars out; arrays are evaluated elementwise.
    """
    arr = np.asarray(u, dtype=float)
    value, d1, d2 = _EVALUATORS[spec.kind](spec.a, np.atleast_1d(arr))
    if arr.ndim == 0:
        return PhiEval(float(value[0]), float(d1[0]), float(d2[0]))
    return PhiEval(value.reshape(arr.shape), d1.reshape(arr.shape), d2.reshape(arr.shape))


def eval_obs_loss(spec: LossSpec, y: int, x, b) -> tuple[float, np.ndarray, np.ndarray]:
    """Per-observation surrogate score with its gradient and Hessian in ``b``.

    ``y*phi(x'b) + (1-y)*phi(-x'b)`` equals ``phi(s x'b)`` with ``s = 2y - 1``,
    so the score is ``s*phi'(s x'b)*x`` and the Hessian ``phi''(s x'b)*x x'``.
    """
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    if x.ndim != 1 or b.shape != x.shape:
        raise ShapeError(f"x and b must be vectors of equal length, got {x.shape} and {b.shape}")
    if y not in (0, 1):
        raise ConfigError(f"y must be 0 or 1, got {y!r}")
    s = 2.0 * y - 1.0
    value, d1, d2 = phi_derivs(spec, np.array([s * float(x @ b)]))
    score = s * d1[0] * x
    hess = d2[0] * np.outer(x, x)
    return float(value[0]), score, hess
