"""Conventional maximum score estimation in two dimensions.

The sample score, as a function of the direction angle, is a step function
that can only change where some ``x_i'b(theta)`` changes sign.  Sorting
those angles and sweeping once gives the exact global maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dgp import Dataset
from .errors import DegenerateDataError, DomainError, ShapeError

_TWO_PI = 2.0 * math.pi
# Breakpoints closer than this are one breakpoint; collinear rows otherwise
# leave rounding-width slivers with a spurious extra count.
_MERGE_TOL = 1e-12


@dataclass(frozen=True)
class MaxScoreFit:
    theta_hat: float
    score: float
    argmax_interval: tuple[float, float]
    n_maximizing_arcs: int

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.theta_hat), math.sin(self.theta_hat)])

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat,
            "score": self.score,
            "argmax_interval": list(self.argmax_interval),
            "n_maximizing_arcs": self.n_maximizing_arcs,
        }


def score_q0(dataset: Dataset, b) -> float:
    """Fraction of observations whose outcome matches the sign of ``x'b``."""
    b = np.asarray(b, dtype=float)
    if b.shape != (dataset.d,):
        raise ShapeError(f"b must have shape ({dataset.d},), got {b.shape}")
    if not np.any(b):
        raise DomainError("maximum score is undefined at b = 0")
    idx = dataset.x @ b
    hit = np.where(dataset.y == 1, idx >= 0, idx < 0)
    return float(hit.mean())


def _wrap(a):
    return (a + math.pi) % _TWO_PI - math.pi


def _merge_close(pts: np.ndarray) -> np.ndarray:
    """Snap runs of breakpoints within ``_MERGE_TOL`` (cyclically) to one value."""
    pts = np.where(pts > math.pi - _MERGE_TOL, -math.pi, pts)
    order = np.argsort(pts, kind="stable")
    srt = pts[order]
    head = np.concatenate([[True], np.diff(srt) > _MERGE_TOL])
    out = np.empty_like(pts)
    out[order] = srt[head][np.cumsum(head) - 1]
    return out


def fit_maxscore_2d(dataset: Dataset) -> MaxScoreFit:
    """Exact maximum score direction for two regressors.

    Observation ``i`` is classified correctly on the open half circle of
    angles within ``pi/2`` of the angle of ``(2y_i - 1) x_i``.  The arc with
    the most coverage wins; among tied arcs the one whose midpoint is closest
    to angle 0, then the first in sorted order, is returned.
    """
    if dataset.d != 2:
        raise ShapeError(f"exact maximum score is implemented for d = 2 only, got d = {dataset.d}")
    if dataset.n < 2:
        raise DegenerateDataError("need at least 2 observations")
    x = dataset.x
    nonzero = np.any(x != 0, axis=1)
    if not nonzero.any():
        raise DegenerateDataError("all regressor rows are zero")
    # x_i = 0 scores 1{0 >= 0}: a hit exactly when y_i = 1, whatever b is.
    constant_hits = int(np.sum(dataset.y[~nonzero] == 1))

    z = dataset.signed_x()[nonzero]
    beta = np.arctan2(z[:, 1], z[:, 0])
    m = len(beta)
    pts = _merge_close(np.concatenate([_wrap(beta - math.pi / 2), _wrap(beta + math.pi / 2)]))
    start, end = pts[:m], pts[m:]
    # Half circles that straddle the cut at -pi are covering it at the start.
    initial = int(np.sum(start > end))

    ev = np.concatenate([np.ones(m, dtype=np.int64), -np.ones(m, dtype=np.int64)])
    order = np.lexsort((ev, pts))
    pts = pts[order]
    ev = ev[order]
    counts = initial + np.cumsum(ev)
    nxt = np.append(pts[1:], pts[0] + _TWO_PI)
    length = nxt - pts
    valid = length > 0
    best = counts[valid].max()
    cand = np.flatnonzero(valid & (counts == best))
    mids = _wrap(0.5 * (pts[cand] + nxt[cand]))
    k = int(np.argmin(np.abs(mids)))  # argmin returns the first of equal keys
    j = cand[k]
    theta = float(mids[k])
    if theta == -math.pi:
        theta = math.pi
    lo, hi = float(pts[j]), float(nxt[j])
    # Report the arc on the same 2*pi sheet as theta_hat.
    shift = round((theta - 0.5 * (lo + hi)) / _TWO_PI) * _TWO_PI
    return MaxScoreFit(
        theta_hat=theta,
        score=(int(best) + constant_hits) / dataset.n,
        argmax_interval=(lo + shift, hi + shift),
        n_maximizing_arcs=int(cand.size),
    )
