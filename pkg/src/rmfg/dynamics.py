"""Problem data and reflected Euler simulation of controlled dynamics on [0, inf).

Relaxed (mixed) controls are simulated through their effective coefficients:
a mixture ``q`` over a finite control grid acts through the averaged drift
``sum q_i b(u_i)`` and averaged variance ``sum q_i sigma(u_i)**2``.  This has
the same generator as the mixed dynamics and avoids constructing martingale
measures explicitly.

Coefficient callables take ``(t, x, mu, u)`` with ``x`` a numpy array,
``mu`` a measure-like object (anything with ``mean()`` and ``moment(p)``)
and ``u`` a control point (a float for one-dimensional control sets).
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._backend import kernels
from .errors import InvalidInputError, NumericError
from .measures import EmpiricalMeasure, MeasureFlow, TimeGrid

__all__ = [
    "CoefficientSet",
    "ControlGrid",
    "StateGrid",
    "RelaxedPolicy",
    "PathBundle",
    "skorokhod_map",
    "effective_coefficients",
    "simulate_reflected",
    "truncate_coefficients",
    "check_assumptions",
]

Coefficient = Callable[..., np.ndarray]


@dataclass(frozen=True)
class CoefficientSet:
    """Drift ``b``, volatility ``sigma``, running cost ``f``, terminal cost ``g``
    and boundary cost rate ``h``, together with the growth/Lipschitz constants
    they are declared to satisfy.

    ``C1`` bounds the Lipschitz modulus of ``b`` and ``sigma`` in ``(x, mu)``,
    ``C2`` their linear growth, ``C3``/``C4`` the quadratic lower/upper bounds
    on the costs.
    """

    b: Coefficient
    sigma: Coefficient
    f: Coefficient
    g: Callable[..., np.ndarray]
    h: Callable[[float], float]
    C1: float
    C2: float
    C3: float
    C4: float
    x0: float = 0.0
    name: str = ""

    def __post_init__(self):
        for k in ("C1", "C2", "C3", "C4"):
            v = getattr(self, k)
            if not (v > 0 and np.isfinite(v)):
                raise InvalidInputError(f"{k} must be a positive constant, got {v}")
        if not (self.x0 >= 0 and np.isfinite(self.x0)):
            raise InvalidInputError(f"initial state must be nonnegative, got {self.x0}")

    def replace(self, **kw) -> "CoefficientSet":
        return dataclasses.replace(self, **kw)


class ControlGrid:
    """Finite set of control points, stored as an ``(n, d)`` array."""

    def __init__(self, points):
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2 or p.shape[0] == 0:
            raise InvalidInputError("control grid must be a nonempty list of points")
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("control points must be finite")
        if np.unique(p, axis=0).shape[0] != p.shape[0]:
            raise InvalidInputError("control grid has duplicate points")
        p.setflags(write=False)
        self.points = p

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int) -> "ControlGrid":
        return cls(np.linspace(lo, hi, n))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __repr__(self) -> str:
        return f"ControlGrid({self.points.squeeze(-1).tolist() if self.dim == 1 else self.points.tolist()})"

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __getitem__(self, j: int):
        return float(self.points[j, 0]) if self.dim == 1 else self.points[j].copy()

    def __iter__(self):
        return (self[j] for j in range(len(self)))


@dataclass(frozen=True)
class StateGrid:
    """Uniform grid of ``m`` nodes on ``[0, xmax]``."""

    xmax: float
    m: int

    def __post_init__(self):
        if not (self.xmax > 0 and np.isfinite(self.xmax)):
            raise InvalidInputError(f"xmax must be positive, got {self.xmax}")
        if int(self.m) != self.m or self.m < 2:
            raise InvalidInputError(f"state grid needs at least 2 nodes, got {self.m}")
        object.__setattr__(self, "xmax", float(self.xmax))
        object.__setattr__(self, "m", int(self.m))

    @property
    def dx(self) -> float:
        return self.xmax / (self.m - 1)

    @property
    def nodes(self) -> np.ndarray:
        x = np.arange(self.m) * self.dx
        x[-1] = self.xmax
        return x

    def nearest(self, x: np.ndarray) -> np.ndarray:
        """Index of the nearest node; states beyond ``xmax`` map to the last node."""
        return np.clip(np.rint(np.asarray(x) / self.dx), 0, self.m - 1).astype(np.int64)


class RelaxedPolicy:
    """Markov feedback policy: a probability vector over ``controls`` for every
    decision node ``k < steps`` and state node.  Off-grid states use the
    nearest state node.
    """

    def __init__(self, grid: TimeGrid, states: StateGrid, controls: ControlGrid, weights):
        w = np.asarray(weights, dtype=float)
        shape = (grid.steps, states.m, len(controls))
        if w.shape != shape:
            raise InvalidInputError(f"policy weights must have shape {shape}, got {w.shape}")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=-1) - 1.0) > 1e-12):
            raise InvalidInputError("policy weights must be probability vectors")
        w.setflags(write=False)
        self.grid = grid
        self.states = states
        self.controls = controls
        self.weights = w

    @classmethod
    def uniform(cls, grid: TimeGrid, states: StateGrid, controls: ControlGrid) -> "RelaxedPolicy":
        n = len(controls)
        return cls(grid, states, controls, np.full((grid.steps, states.m, n), 1.0 / n))

    @classmethod
    def constant(cls, grid: TimeGrid, states: StateGrid, controls: ControlGrid, j: int) -> "RelaxedPolicy":
        w = np.zeros((grid.steps, states.m, len(controls)))
        w[..., j] = 1.0
        return cls(grid, states, controls, w)

    def nondirac_fraction(self) -> float:
        """Share of (time, state) nodes whose weight vector is not a point mass."""
        return float(np.mean(self.weights.max(axis=-1) < 1.0))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x"] + [f"w{j}" for j in range(len(self.controls))])
            t, x = self.grid.nodes, self.states.nodes
            for k in range(self.grid.steps):
                for i in range(self.states.m):
                    w.writerow([repr(float(t[k])), repr(float(x[i]))] + [repr(float(v)) for v in self.weights[k, i]])


@dataclass
class PathBundle:
    """Monte Carlo sample of reflected paths.

    ``X`` and ``K`` have shape ``(paths, nodes)``.  ``state_index[p, k]`` is the
    policy state node used on step ``k`` of path ``p`` and ``policy_time[k]``
    the policy decision node, so ``controls`` recovers the applied mixtures.
    ``mu`` is the frozen flow the paths were simulated against (``None`` for a
    self-interacting particle system), ``mu_time[k]`` its node for step ``k``.
    """

    grid: TimeGrid
    X: np.ndarray
    K: np.ndarray
    state_index: np.ndarray
    policy: RelaxedPolicy
    policy_time: np.ndarray
    mu: Optional[MeasureFlow]
    mu_time: np.ndarray
    seed: int
    path_ids: np.ndarray
    state_clamps: int = 0

    @property
    def npaths(self) -> int:
        return self.X.shape[0]

    @property
    def dK(self) -> np.ndarray:
        """Increments ``K_{k+1} - K_k``, shape ``(paths, steps)``."""
        return np.diff(self.K, axis=1)

    @property
    def controls(self) -> np.ndarray:
        """Applied control mixtures, shape ``(paths, steps, controls)``."""
        return self.policy.weights[self.policy_time[None, :], self.state_index]

    def flow(self) -> MeasureFlow:
        return MeasureFlow(self.grid, self.X, pathwise=True)

    def measure_at(self, k: int):
        """The measure argument of the coefficients on step ``k``."""
        if self.mu is None:
            return EmpiricalMeasure(self.X[:, k])
        return self.mu.marginal(int(self.mu_time[k]))

    def to_csv(self, path, max_paths: Optional[int] = None) -> None:
        n = self.npaths if max_paths is None else min(self.npaths, max_paths)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "node", "t", "X", "K"])
            t = self.grid.nodes
            for p in range(n):
                pid = int(self.path_ids[p])
                for k in range(self.grid.size):
                    w.writerow([pid, k, repr(float(t[k])), repr(float(self.X[p, k])), repr(float(self.K[p, k]))])


def skorokhod_map(z) -> tuple[np.ndarray, np.ndarray]:
    """Discrete one-sided Skorokhod map along the last axis.

    ``k_t = max(0, -min_{s<=t} z_s)`` and ``x = z + k``.  Where ``k`` increases,
    ``x`` is exactly zero.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] == 0:
        raise InvalidInputError("empty path")
    if np.any(z[..., 0] < 0):
        raise InvalidInputError("Skorokhod map needs a nonnegative starting point")
    k = np.maximum(0.0, -np.minimum.accumulate(z, axis=-1)) + 0.0
    x = z + k
    return x, k


def _evaluate(fn, name, t, x, mu, u):
    v = np.broadcast_to(np.asarray(fn(t, x, mu, u), dtype=float), np.shape(x))
    if not np.all(np.isfinite(v)):
        bad = np.flatnonzero(~np.isfinite(v.ravel()))[0]
        raise NumericError(f"non-finite {name}", (float(t), float(np.ravel(x)[bad]), u))
    return v


def control_coefficients(c: CoefficientSet, cg: ControlGrid, t, x, mu, which=("b", "sigma2", "f"), active=None):
    """Per-control coefficient values, each of shape ``(controls,) + x.shape``.

    Controls not flagged in ``active`` are left at zero; the caller
    guarantees they carry zero weight.
    """
    x = np.asarray(x, dtype=float)
    out = {k: np.zeros((len(cg),) + x.shape) for k in which}
    for j, u in enumerate(cg):
        if active is not None and not active[j]:
            continue
        if "b" in out:
            out["b"][j] = _evaluate(c.b, "drift", t, x, mu, u)
        if "sigma2" in out:
            out["sigma2"][j] = _evaluate(c.sigma, "volatility", t, x, mu, u) ** 2
        if "sigma" in out:
            out["sigma"][j] = _evaluate(c.sigma, "volatility", t, x, mu, u)
        if "f" in out:
            out["f"][j] = _evaluate(c.f, "running cost", t, x, mu, u)
    return out


def _check_mixture(q, n):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != n:
        raise InvalidInputError(f"mixture has {q.shape[-1]} weights for {n} controls")
    if np.any(q < 0) or np.any(np.abs(q.sum(axis=-1) - 1.0) > 1e-9):
        raise InvalidInputError("mixture weights must be nonnegative and sum to 1")
    return q


def effective_coefficients(c: CoefficientSet, cg: ControlGrid, t, x, mu, q):
    """Averaged drift, variance and running cost of control mixture ``q``.

    ``q`` has shape ``(..., controls)`` broadcastable against ``x``.
    Returns ``(sum q_i b_i, sum q_i sigma_i**2, sum q_i f_i)``.
    """
    q = _check_mixture(q, len(cg))
    x = np.asarray(x, dtype=float)
    vals = control_coefficients(c, cg, t, x, mu)
    qm = np.moveaxis(q, -1, 0)
    pad = x.ndim - (qm.ndim - 1)
    if pad > 0:  # align the mixture's batch axes with the trailing axes of x
        qm = qm.reshape((qm.shape[0],) + (1,) * pad + qm.shape[1:])
    return tuple(np.sum(qm * vals[k], axis=0) for k in ("b", "sigma2", "f"))


def _time_map(dst: TimeGrid, src: TimeGrid, n: int, last: int) -> np.ndarray:
    """Index into ``src`` nodes for the first ``n`` nodes of ``dst`` (latest node at or before)."""
    if dst == src:
        return np.minimum(np.arange(n), last)
    if abs(dst.horizon - src.horizon) > 1e-12 * dst.horizon:
        raise InvalidInputError(f"grids have different horizons: {dst} vs {src}")
    idx = np.floor(dst.nodes[:n] / src.dt + 1e-9).astype(np.int64)
    return np.clip(idx, 0, last)


def simulate_reflected(
    c: CoefficientSet,
    mu: Optional[MeasureFlow],
    policy: RelaxedPolicy,
    npaths: int,
    seed: int,
    *,
    grid: Optional[TimeGrid] = None,
    refine: int = 1,
    path_offset: int = 0,
    x0=None,
) -> PathBundle:
    """Reflected Euler simulation of the relaxed-controlled dynamics.

    Each step draws ``Z = X + drift*dt + sqrt(var*dt)*xi`` with the effective
    coefficients of the applied mixture and projects:
    ``X_next = max(Z, 0)``, ``dK = max(-Z, 0)``.

    ``mu=None`` simulates the self-interacting particle system in which the
    measure argument is the current empirical law of the simulated paths.
    ``grid`` may be finer than the policy/flow grids (both are then read
    piecewise constant in time); with ``refine=r`` each step uses the sum of
    ``r`` fine-level normals so that runs at different step sizes share
    Brownian increments.  Path ``p`` uses noise stream ``path_offset + p``.
    """
    if int(npaths) != npaths or npaths < 1:
        raise InvalidInputError(f"npaths must be a positive integer, got {npaths}")
    grid = policy.grid if grid is None else grid
    if mu is not None and mu.grid != policy.grid and grid == policy.grid:
        raise InvalidInputError(f"flow grid {mu.grid} does not match policy grid {policy.grid}")
    ptime = _time_map(grid, policy.grid, grid.steps, policy.grid.steps - 1)
    mtime = _time_map(grid, mu.grid, grid.size, mu.grid.steps) if mu is not None else np.arange(grid.size)
    ids = np.arange(path_offset, path_offset + npaths, dtype=np.int64)
    cg = policy.controls
    dt = grid.dt
    X = np.empty((npaths, grid.size))
    K = np.empty((npaths, grid.size))
    sidx = np.empty((npaths, grid.steps), dtype=np.int32)
    X[:, 0] = c.x0 if x0 is None else x0
    K[:, 0] = 0.0
    clamps = 0
    xmax = policy.states.xmax
    for k in range(grid.steps):
        x = X[:, k]
        t = grid.nodes[k]
        m = EmpiricalMeasure(x) if mu is None else mu.marginal(int(mtime[k]))
        idx = policy.states.nearest(x)
        clamps += int(np.count_nonzero(x > xmax))
        sidx[:, k] = idx
        q = policy.weights[ptime[k]][idx]
        active = q.max(axis=0) > 0
        vals = control_coefficients(c, cg, t, x, m, which=("b", "sigma2"), active=active)
        qm = q.T
        drift = np.sum(qm * vals["b"], axis=0)
        var = np.sum(qm * vals["sigma2"], axis=0)
        x_new, dk = kernels.euler_reflect(x, drift, var, dt, seed, ids, k, refine)
        X[:, k + 1] = x_new
        K[:, k + 1] = K[:, k] + dk
    return PathBundle(
        grid=grid,
        X=X,
        K=K,
        state_index=sidx,
        policy=policy,
        policy_time=ptime,
        mu=mu,
        mu_time=mtime,
        seed=int(seed),
        path_ids=ids,
        state_clamps=clamps,
    )


def truncate_coefficients(c: CoefficientSet, n: float) -> CoefficientSet:
    """Clamp drift and volatility pointwise to ``[-n, n]``; costs unchanged."""
    if not (n > 0):
        raise InvalidInputError(f"truncation level must be positive, got {n}")
    n = float(n)
    b, s = c.b, c.sigma
    while getattr(b, "_truncated_at", None) == n:
        b = b._inner
    while getattr(s, "_truncated_at", None) == n:
        s = s._inner
    return c.replace(b=_Clamped(b, n), sigma=_Clamped(s, n), name=c.name and f"{c.name}|n={n:g}")


class _Clamped:
    __slots__ = ("_inner", "_truncated_at")

    def __init__(self, fn, n):
        self._inner = fn
        self._truncated_at = n

    def __call__(self, t, x, mu, u):
        return np.clip(self._inner(t, x, mu, u), -self._truncated_at, self._truncated_at)


def _probe_measure(rng, size=64):
    scale = rng.uniform(0.1, 5.0)
    return EmpiricalMeasure(np.abs(rng.normal(rng.uniform(0, 3), scale, size)))


def check_assumptions(c: CoefficientSet, cg: ControlGrid, nprobe: int = 200, seed: int = 0, T: float = 1.0) -> dict:
    """Spot-check the declared growth, cost and Lipschitz constants on random probes.

    Returns the largest observed ratio of each left side to its declared
    bound (``<= 1`` means the probe set found no violation) and a ``passed`` flag.
    """
    from .measures import w2_distance

    rng = np.random.default_rng(seed)
    worst = {"growth": 0.0, "running_cost": 0.0, "terminal_upper": 0.0, "terminal_lower": 0.0, "lipschitz": 0.0}
    for _ in range(nprobe):
        t = rng.uniform(0, T)
        mu, nu = _probe_measure(rng), _probe_measure(rng)
        x = rng.uniform(0, 10, 8)
        y = np.clip(x + rng.normal(0, 0.5, 8), 0, None)
        m2 = mu.moment(2)
        quad = 1 + x**2 + m2
        for u in cg:
            bx, sx = np.broadcast_to(c.b(t, x, mu, u), x.shape), np.broadcast_to(c.sigma(t, x, mu, u), x.shape)
            by, sy = np.broadcast_to(c.b(t, y, nu, u), x.shape), np.broadcast_to(c.sigma(t, y, nu, u), x.shape)
            grow = (np.abs(bx) + np.abs(sx)) / (c.C2 * (1 + x + np.sqrt(m2)))
            worst["growth"] = max(worst["growth"], float(grow.max()))
            fx = np.broadcast_to(c.f(t, x, mu, u), x.shape)
            worst["running_cost"] = max(worst["running_cost"], float((np.abs(fx) / (c.C4 * quad)).max()))
            d = np.abs(x - y) + w2_distance(mu, nu)
            lip = (np.abs(bx - by) + np.abs(sx - sy)) / np.maximum(c.C1 * d, 1e-300)
            lip = np.where(d > 0, lip, 0.0)
            worst["lipschitz"] = max(worst["lipschitz"], float(lip.max()))
        gx = np.broadcast_to(c.g(x, mu), x.shape)
        worst["terminal_upper"] = max(worst["terminal_upper"], float((gx / (c.C4 * quad)).max()))
        worst["terminal_lower"] = max(worst["terminal_lower"], float((-gx / (c.C3 * quad)).max()))
    report = dict(worst)
    report["passed"] = all(v <= 1.0 + 1e-12 for v in worst.values())
    return report
