"""Empirical measures on the half-line and flows of them over a time grid.

All measures are uniform-weight particle measures.  Quadratic Wasserstein
distances between 1-D empirical laws are computed from sorted samples
(quantile coupling), which is exact for this representation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "TimeGrid",
    "EmpiricalMeasure",
    "MeasureFlow",
    "w2_distance",
    "flow_distance",
    "moment",
    "flow_sup_moment",
    "split_half_noise",
    "read_measure_csv",
    "read_flow_csv",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * horizon / steps`` on ``[0, horizon]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise InvalidInputError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidInputError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def size(self) -> int:
        """Number of nodes (``steps + 1``)."""
        return self.steps + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.steps + 1) * self.dt
        t[-1] = self.horizon
        return t

    def index_of(self, t: float) -> int:
        """Index of the node equal to ``t``; off-grid times are rejected."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.steps or abs(k * self.dt - t) > 1e-9 * max(1.0, self.horizon):
            raise InvalidInputError(f"time {t} is not a node of {self}")
        return k

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * int(factor))


class EmpiricalMeasure:
    """Uniform empirical measure on ``[0, inf)``; samples are kept sorted.

    Besides the samples themselves, coefficient functions only ever use
    :meth:`mean` and :meth:`moment`, so any object exposing those two methods
    can stand in for a measure during coefficient evaluation.
    """

    __slots__ = ("samples", "_mean")

    def __init__(self, samples: Iterable[float], *, assume_sorted: bool = False):
        s = np.asarray(samples, dtype=float).ravel()
        if s.size == 0:
            raise InvalidInputError("empirical measure needs at least one sample")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("samples must be finite")
        if s.min() < 0:
            raise InvalidInputError(f"samples must be nonnegative, min is {s.min()}")
        if not assume_sorted:
            s = np.sort(s)
        s.setflags(write=False)
        self.samples = s
        self._mean = None

    def __len__(self) -> int:
        return self.samples.size

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(n={len(self)}, mean={self.mean():.6g})"

    @classmethod
    def dirac(cls, x: float, n: int = 1) -> "EmpiricalMeasure":
        return cls(np.full(n, float(x)), assume_sorted=True)

    def mean(self) -> float:
        if self._mean is None:
            self._mean = float(self.samples.mean())
        return self._mean

    def moment(self, p: float) -> float:
        return moment(self, p)

    def shifted(self, c: float) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.samples + c, assume_sorted=True)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample"])
            for v in self.samples:
                w.writerow([repr(float(v))])


def read_measure_csv(path) -> EmpiricalMeasure:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return EmpiricalMeasure([float(r[0]) for r in rows[1:]])


class MeasureFlow:
    """One empirical marginal per node of a :class:`TimeGrid`.

    ``values`` has shape ``(particles, nodes)``.  When ``pathwise`` is true,
    row ``i`` is the trajectory of particle ``i``; otherwise each column is
    only a bag of samples and row identity carries no meaning.
    """

    def __init__(self, grid: TimeGrid, values: np.ndarray, *, pathwise: bool = True):
        v = np.asarray(values, dtype=float)
        if v.ndim != 2 or v.shape[1] != grid.size:
            raise InvalidInputError(
                f"flow values must have shape (particles, {grid.size}), got {v.shape}"
            )
        if v.shape[0] < 1:
            raise InvalidInputError("flow needs at least one particle")
        if not np.all(np.isfinite(v)) or v.min() < 0:
            raise InvalidInputError("flow samples must be finite and nonnegative")
        v.setflags(write=False)
        self.grid = grid
        self.values = v
        self.pathwise = bool(pathwise)
        self._marginals: dict[int, EmpiricalMeasure] = {}

    @classmethod
    def from_marginals(cls, grid: TimeGrid, marginals: Sequence[EmpiricalMeasure]) -> "MeasureFlow":
        if len(marginals) != grid.size:
            raise InvalidInputError(f"need {grid.size} marginals, got {len(marginals)}")
        sizes = {len(m) for m in marginals}
        if len(sizes) != 1:
            raise InvalidInputError(f"marginals must share one sample count, got {sorted(sizes)}")
        flow = cls(grid, np.stack([m.samples for m in marginals], axis=1), pathwise=False)
        flow._marginals = dict(enumerate(marginals))
        return flow

    @classmethod
    def constant(cls, grid: TimeGrid, measure: EmpiricalMeasure) -> "MeasureFlow":
        return cls(grid, np.repeat(measure.samples[:, None], grid.size, axis=1), pathwise=True)

    @property
    def nparticles(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.grid.size

    def marginal(self, k: int) -> EmpiricalMeasure:
        m = self._marginals.get(k)
        if m is None:
            m = EmpiricalMeasure(self.values[:, k])
            self._marginals[k] = m
        return m

    __getitem__ = marginal

    @property
    def terminal(self) -> EmpiricalMeasure:
        return self.marginal(self.grid.steps)

    def means(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def shifted(self, c: float) -> "MeasureFlow":
        return MeasureFlow(self.grid, self.values + c, pathwise=self.pathwise)

    def subset(self, rows) -> "MeasureFlow":
        return MeasureFlow(self.grid, self.values[rows], pathwise=self.pathwise)

    def to_csv(self, path) -> None:
        """Row per time node: ``t`` followed by the particle values."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"p{i}" for i in range(self.nparticles)])
            for k, t in enumerate(self.grid.nodes):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.values[:, k]])


def read_flow_csv(path) -> MeasureFlow:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    t = data[:, 0]
    grid = TimeGrid(t[-1], len(t) - 1)
    if not np.allclose(t, grid.nodes, rtol=0, atol=1e-12 * max(1.0, t[-1])):
        raise InvalidInputError("flow CSV times are not a uniform grid starting at 0")
    return MeasureFlow(grid, data[:, 1:].T, pathwise=True)


def _check_measure(m) -> EmpiricalMeasure:
    if not isinstance(m, EmpiricalMeasure):
        raise InvalidInputError(f"expected EmpiricalMeasure, got {type(m).__name__}")
    return m


def _w2_sorted(a: np.ndarray, b: np.ndarray) -> float:
    n, m = a.size, b.size
    if n == m:
        return float(np.sqrt(np.mean((a - b) ** 2)))
    # Exact quantile-function integral over the merged breakpoints
    # {i/n} U {j/m}; equals resampling both to lcm(n, m) atoms.
    s = np.unique(np.concatenate([np.arange(1, n + 1) / n, np.arange(1, m + 1) / m]))
    s[-1] = 1.0
    left = np.concatenate([[0.0], s[:-1]])
    width = s - left
    mid = 0.5 * (left + s)
    ia = np.minimum((mid * n).astype(np.int64), n - 1)
    ib = np.minimum((mid * m).astype(np.int64), m - 1)
    return float(np.sqrt(np.sum(width * (a[ia] - b[ib]) ** 2)))


def w2_distance(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Quadratic Wasserstein distance between two empirical measures.

    For equal sample counts this is the root-mean-square difference of the
    order statistics.  Unequal counts are compared through their quantile
    functions, i.e. both are resampled onto a common quantile grid.
    """
    return _w2_sorted(_check_measure(a).samples, _check_measure(b).samples)


def _check_grids(a: MeasureFlow, b: MeasureFlow) -> None:
    if a.grid != b.grid:
        raise InvalidInputError(f"flows live on different grids: {a.grid} vs {b.grid}")


def _nodewise_w2(a: MeasureFlow, b: MeasureFlow) -> np.ndarray:
    _check_grids(a, b)
    if a.nparticles == b.nparticles:
        sa = np.sort(a.values, axis=0)
        sb = np.sort(b.values, axis=0)
        return np.sqrt(np.mean((sa - sb) ** 2, axis=0))
    return np.array([w2_distance(a.marginal(k), b.marginal(k)) for k in range(a.grid.size)])


def flow_distance(a: MeasureFlow, b: MeasureFlow, mode: str = "sup") -> float:
    """Distance between two flows on the same grid.

    ``mode="sup"`` gives the maximum nodewise W2; ``mode="integrated"`` the
    trapezoidal approximation of the time integral of the squared W2.
    """
    d = _nodewise_w2(a, b)
    if mode == "sup":
        return float(d.max())
    if mode in ("integrated", "time-integrated-squared"):
        d2 = d**2
        return float(a.grid.dt * (d2.sum() - 0.5 * (d2[0] + d2[-1])))
    raise InvalidInputError(f"unknown flow distance mode {mode!r}")


def moment(m: EmpiricalMeasure, p: float) -> float:
    """``|m|^p``, the mean of ``|x|^p`` under ``m``."""
    _check_measure(m)
    if p < 0:
        raise InvalidInputError(f"moment order must be nonnegative, got {p}")
    if p == 0:
        return 1.0
    return float(np.mean(np.abs(m.samples) ** p))


def flow_sup_moment(m: MeasureFlow, p: float, t: float) -> float:
    """Path-space moment ``E sup_{s<=t} |X_s|^p`` of a flow.

    Uses particle running maxima when the flow is pathwise.  Without particle
    identity it falls back to the largest marginal moment up to ``t``, which
    can only underestimate the path-space quantity.
    """
    k = m.grid.index_of(t)
    if p < 0:
        raise InvalidInputError(f"moment order must be nonnegative, got {p}")
    if p == 0:
        return 1.0
    if m.pathwise:
        run = np.abs(m.values[:, : k + 1]).max(axis=1)
        return float(np.mean(run**p))
    return max(moment(m.marginal(j), p) for j in range(k + 1))


def split_half_noise(flow: MeasureFlow) -> float:
    """Monte Carlo noise scale of a flow's nodewise W2.

    Compares the first and second halves of the particle set; divided by
    sqrt(2) this estimates the sup-W2 distance between two independent
    full-size samples of the same law.
    """
    n = flow.nparticles
    if n < 2:
        return float("inf")
    h = n // 2
    a = MeasureFlow(flow.grid, flow.values[:h], pathwise=False)
    b = MeasureFlow(flow.grid, flow.values[h : 2 * h], pathwise=False)
    return float(_nodewise_w2(a, b).max() / np.sqrt(2.0))
