"""Datasets and the three simulated threshold-crossing designs.

Seeds are anything ``numpy.random.SeedSequence`` accepts as entropy: an int
or a sequence of ints.  A dataset seed is split into two child streams,
one for the regressors and one for the latent errors, so the two can be
varied independently.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, FormatError, InsufficientDataError

Seed = Union[int, Sequence[int]]

SIGMA = np.array([[1.0, 0.5], [0.5, 1.0]])
B0 = np.array([1.0, 1.0]) / math.sqrt(2.0)
THETA0 = math.pi / 4


class XDist(str, enum.Enum):
    NORMAL = "normal"
    T5 = "t5"
    LAPLACE = "laplace"


@dataclass(frozen=True)
class SimDesign:
    """Regressor law plus the fixed coefficient and logistic errors."""

    xdist: XDist
    sigma: tuple = ((1.0, 0.5), (0.5, 1.0))
    b0: tuple = (1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0))

    def __post_init__(self):
        object.__setattr__(self, "xdist", XDist(self.xdist))
        sig = np.asarray(self.sigma, dtype=float)
        if sig.shape != (2, 2) or not np.allclose(sig, sig.T):
            raise DomainError("sigma must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(sig).min() <= 0:
            raise DomainError("sigma must be positive definite")

    @property
    def name(self) -> str:
        return self.xdist.value

    @property
    def theta0(self) -> float:
        return math.atan2(self.b0[1], self.b0[0])

    @property
    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(np.asarray(self.sigma, dtype=float))


DESIGNS = {d.value: SimDesign(d) for d in XDist}


def get_design(design: SimDesign | str) -> SimDesign:
    if isinstance(design, SimDesign):
        return design
    try:
        return DESIGNS[design]
    except KeyError:
        raise DomainError(
            f"unknown design {design!r}; supported: {', '.join(DESIGNS)}"
        ) from None


@dataclass(frozen=True)
class SyntheticSource:
    design: str
    seed: tuple


@dataclass(frozen=True)
class FileSource:
    path: str


@dataclass
class Dataset:
    """Binary outcomes ``y`` (0/1) and regressors ``x`` of shape (n, d)."""

    y: np.ndarray
    x: np.ndarray
    source: Union[SyntheticSource, FileSource, None] = field(default=None, compare=False)

    def __post_init__(self):
        self.y = np.asarray(self.y)
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 2:
            raise FormatError(f"x must be a 2-d array, got shape {self.x.shape}")
        if self.y.shape != (self.x.shape[0],):
            raise FormatError(f"y has shape {self.y.shape}, expected ({self.x.shape[0]},)")
        bad = np.flatnonzero((self.y != 0) & (self.y != 1))
        if bad.size:
            raise DomainError(f"y must be 0 or 1; row {bad[0]} has {self.y[bad[0]]!r}")
        self.y = self.y.astype(np.int8)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def signs(self) -> np.ndarray:
        """``2y - 1`` as floats."""
        return 2.0 * self.y - 1.0

    def signed_x(self) -> np.ndarray:
        """Rows ``(2y_i - 1) x_i``; the surrogate objective depends on the data only through these."""
        return self.signs[:, None] * self.x

    def take(self, idx) -> "Dataset":
        return Dataset(self.y[idx], self.x[idx], self.source)


def _seed_tuple(seed: Seed) -> tuple:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def _streams(seed: Seed) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    x_ss, eps_ss = np.random.SeedSequence(_seed_tuple(seed)).spawn(2)
    return x_ss, eps_ss


def _draw_x(design: SimDesign, n: int, ss: np.random.SeedSequence) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(ss))
    x = rng.standard_normal((n, 2)) @ design.chol.T
    if design.xdist is XDist.T5:
        u = rng.chisquare(5.0, n)
        x /= np.sqrt(u / 5.0)[:, None]
    elif design.xdist is XDist.LAPLACE:
        s = rng.standard_exponential(n)
        x *= np.sqrt(s)[:, None]
    return x


def _draw_logistic(n: int, ss: np.random.SeedSequence) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(ss))
    u = rng.random(n)
    # u == 0 maps to -inf, which still yields a valid y = 0.
    with np.errstate(divide="ignore"):
        return np.log(u) - np.log1p(-u)


def sample_x(design: SimDesign | str, n: int, seed: Seed) -> np.ndarray:
    """Draw ``n`` regressor rows from the design; a pure function of its arguments."""
    design = get_design(design)
    if n < 1:
        raise InsufficientDataError(f"n must be at least 1, got {n}")
    x_ss, _ = _streams(seed)
    return _draw_x(design, n, x_ss)


def simulate(
    design: SimDesign,
    n: int,
    x_stream: np.random.SeedSequence,
    eps_stream: np.random.SeedSequence,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (y, x) from explicit regressor and error streams."""
    x = _draw_x(design, n, x_stream)
    eps = _draw_logistic(n, eps_stream)
    y = (x @ np.asarray(design.b0) + eps >= 0).astype(np.int8)
    return y, x


def gen_dataset(design: SimDesign | str, n: int, seed: Seed) -> Dataset:
    """Simulate ``y = 1{x'b0 + eps >= 0}`` with logistic ``eps`` independent of ``x``."""
    design = get_design(design)
    if n < 1:
        raise InsufficientDataError(f"n must be at least 1, got {n}")
    x_ss, eps_ss = _streams(seed)
    y, x = simulate(design, n, x_ss, eps_ss)
    return Dataset(y, x, SyntheticSource(design.name, _seed_tuple(seed)))


def load_csv(path: str | os.PathLike) -> Dataset:
    """Read a ``y,x1,...,xd`` file.

    Raises FormatError for a missing header or ragged rows, DomainError for
    a non-binary ``y`` or non-finite regressor, and InsufficientDataError
    when there are not more rows than regressors.
    """
    path = os.fspath(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        d = len(header) - 1
        expected = ["y"] + [f"x{j}" for j in range(1, d + 1)]
        if d < 1 or header != expected:
            raise FormatError(
                f"{path}: header must be {','.join(expected) if d >= 1 else 'y,x1,...,xd'}, "
                f"got {','.join(header)!r}"
            )
        ys, xs = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 1:
                raise FormatError(f"{path}: row {lineno} has {len(row)} fields, expected {d + 1}")
            try:
                yv = float(row[0])
            except ValueError:
                raise DomainError(f"{path}: row {lineno}: y value {row[0]!r} is not 0 or 1") from None
            if yv not in (0.0, 1.0):
                raise DomainError(f"{path}: row {lineno}: y value {row[0]!r} is not 0 or 1")
            try:
                xv = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}: row {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in xv):
                raise DomainError(f"{path}: row {lineno}: non-finite regressor")
            ys.append(int(yv))
            xs.append(xv)
    n = len(ys)
    if n <= d:
        raise InsufficientDataError(f"{path}: {n} rows for {d} regressors; need more rows than regressors")
    return Dataset(np.array(ys, dtype=np.int8), np.array(xs, dtype=float), FileSource(path))


def write_csv(dataset: Dataset, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"x{j}" for j in range(1, dataset.d + 1)])
        for yi, xi in zip(dataset.y, dataset.x):
            w.writerow([int(yi)] + [repr(float(v)) for v in xi])
