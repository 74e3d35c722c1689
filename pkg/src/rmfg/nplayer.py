"""Finite-N symmetric game and empirical deviation gains.

All replications advance together: states are held as a ``(replications,
players)`` matrix and the coefficients see, per replication, the empirical
measure of that replication's players.  Player ``i`` of replication ``r``
draws noise stream ``r * N + player_ids[i]``, so permuting ``player_ids``
permutes players exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._backend import kernels
from .agent import solve_dp
from .dynamics import CoefficientSet, ControlGrid, RelaxedPolicy, control_coefficients
from .errors import InvalidInputError
from .measures import EmpiricalMeasure, MeasureFlow, TimeGrid
from .seeding import derive_seed

__all__ = ["GameConfig", "GameResult", "DeviationReport", "simulate_nplayer", "estimate_deviation_gain"]


@dataclass(frozen=True)
class GameConfig:
    N: int
    npaths: int = 200  # independent replications
    seed: int = 0
    deviations: Optional[ControlGrid] = None  # constant deviations; defaults to the policy's grid
    best_response: bool = True
    pilot_paths: Optional[int] = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidInputError(f"player count must be a positive integer, got {self.N}")
        if int(self.npaths) != self.npaths or self.npaths < 2:
            raise InvalidInputError(f"need at least 2 replications, got {self.npaths}")

    def seed_for(self, *labels) -> int:
        return derive_seed(self.seed, "nplayer", self.N, *labels)


class _Batch:
    """Per-replication empirical measures of a ``(replications, players)`` state matrix.

    ``mean()`` and ``moment(p)`` return ``(replications, 1)`` columns that
    broadcast against the state matrix.  Statistics come from row-sorted
    states, so they do not depend on player order.
    """

    __slots__ = ("s",)

    def __init__(self, x):
        self.s = np.sort(x, axis=1)

    def mean(self):
        return self.s.mean(axis=1, keepdims=True)

    def moment(self, p):
        if p == 0:
            return np.ones((self.s.shape[0], 1))
        return np.mean(np.abs(self.s) ** p, axis=1, keepdims=True)


@dataclass
class GameResult:
    grid: TimeGrid
    X: np.ndarray  # (replications, players, nodes)
    K: np.ndarray
    costs: np.ndarray  # (replications, players)

    @property
    def mean_costs(self) -> np.ndarray:
        return self.costs.mean(axis=0)

    @property
    def degenerate(self) -> bool:
        return self.X.shape[1] == 1

    def mean_flow(self) -> MeasureFlow:
        """All replications' players pooled into one flow."""
        r, n, k = self.X.shape
        return MeasureFlow(self.grid, self.X.reshape(r * n, k), pathwise=True)


def simulate_nplayer(
    c: CoefficientSet,
    policy: RelaxedPolicy,
    gc: GameConfig,
    *,
    seed: Optional[int] = None,
    deviation: Optional[RelaxedPolicy] = None,
    player_ids: Optional[Sequence[int]] = None,
) -> GameResult:
    """Simulate ``gc.npaths`` replications of the N-player game.

    Every player follows ``policy``; with ``deviation`` given, player 0
    follows it instead.  Costs follow the single-agent cost functional with
    the measure argument replaced by the replication's empirical measure.
    """
    N, R = int(gc.N), int(gc.npaths)
    grid = policy.grid
    if deviation is not None and (
        deviation.grid != grid or not np.array_equal(deviation.controls.points, policy.controls.points)
    ):
        raise InvalidInputError("deviation policy must share the time grid and control grid")
    pid = np.arange(N) if player_ids is None else np.asarray(player_ids, dtype=np.int64)
    if sorted(pid.tolist()) != list(range(N)):
        raise InvalidInputError("player_ids must be a permutation of range(N)")
    s = gc.seed_for("game") if seed is None else seed
    ids = (np.arange(R, dtype=np.int64)[:, None] * N + pid[None, :]).ravel()
    cg = policy.controls
    dt = grid.dt
    X = np.empty((R, N, grid.size))
    K = np.zeros((R, N, grid.size))
    X[:, :, 0] = c.x0
    cost = np.zeros((R, N))
    states = policy.states
    for k in range(grid.steps):
        x = X[:, :, k]
        t = grid.nodes[k]
        m = _Batch(x)
        idx = states.nearest(x)
        q = policy.weights[k][idx]
        if deviation is not None:
            q = q.copy()
            q[:, 0] = deviation.weights[k][deviation.states.nearest(x[:, 0])]
        active = q.reshape(-1, len(cg)).max(axis=0) > 0
        v = control_coefficients(c, cg, t, x, m, active=active)
        qm = np.moveaxis(q, -1, 0)
        drift = np.sum(qm * v["b"], axis=0)
        var = np.sum(qm * v["sigma2"], axis=0)
        cost += np.sum(qm * v["f"], axis=0) * dt
        xn, dk = kernels.euler_reflect(x.ravel(), drift.ravel(), var.ravel(), dt, s, ids, k)
        X[:, :, k + 1] = xn.reshape(R, N)
        K[:, :, k + 1] = K[:, :, k] + dk.reshape(R, N)
        cost += float(c.h(t)) * dk.reshape(R, N)
    xT = X[:, :, -1]
    cost += np.broadcast_to(np.asarray(c.g(xT, _Batch(xT)), dtype=float), xT.shape)
    return GameResult(grid, X, K, cost)


class _SelfInclusiveFlow:
    """Environment seen by one deviating player among ``N``.

    On the DP state grid, the mean of the population at state ``x`` is
    ``(x + (N - 1) m_k) / N`` with ``m_k`` the mean of the other players
    (estimated by a pilot run), and likewise for moments.
    """

    def __init__(self, grid, others: MeasureFlow, N: int, x: np.ndarray):
        self.grid = grid
        self._m = others.values.mean(axis=0)
        self._v = others.values
        self._N = N
        self._x = x

    def marginal(self, k):
        return _SelfInclusiveMeasure(self, k)


class _SelfInclusiveMeasure:
    __slots__ = ("f", "k")

    def __init__(self, f, k):
        self.f, self.k = f, k

    def mean(self):
        f = self.f
        return (f._x + (f._N - 1) * f._m[self.k]) / f._N

    def moment(self, p):
        f = self.f
        if p == 0:
            return np.ones_like(f._x)
        mo = EmpiricalMeasure(f._v[:, self.k]).moment(p)
        return (np.abs(f._x) ** p + (f._N - 1) * mo) / f._N


@dataclass
class DeviationReport:
    N: int
    baseline: float
    baseline_stderr: float
    rows: list = field(default_factory=list)  # one dict per deviation candidate

    @property
    def best(self) -> dict:
        return max(self.rows, key=lambda r: r["gap"])

    @property
    def best_cost(self) -> float:
        return self.best["cost"]

    @property
    def gap(self) -> float:
        return self.best["gap"]

    @property
    def gap_stderr(self) -> float:
        return self.best["gap_stderr"]

    def to_csv(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if not append:
                w.writerow(["N", "deviation", "baseline", "deviating_cost", "gap", "stderr"])
            for r in self.rows:
                w.writerow([self.N, r["id"], repr(self.baseline), repr(r["cost"]), repr(r["gap"]), repr(r["gap_stderr"])])


def estimate_deviation_gain(c: CoefficientSet, policy: RelaxedPolicy, gc: GameConfig) -> DeviationReport:
    """Largest cost reduction player 0 finds against players following ``policy``.

    Candidates are every constant control of ``gc.deviations`` (default: the
    policy's control grid) and, if ``gc.best_response``, the DP best response
    to the environment estimated by a pilot run.  Baseline and deviations use
    common random numbers, and gaps carry paired standard errors.  The search
    is a finite family, so the gap is a lower bound on the true one.
    """
    if gc.N < 2:
        raise InvalidInputError(f"deviation gain needs at least 2 players, got {gc.N}")
    base = simulate_nplayer(c, policy, gc)
    b = base.costs[:, 0]
    R = b.size
    rep = DeviationReport(int(gc.N), float(b.mean()), float(b.std(ddof=1) / np.sqrt(R)))
    candidates = []
    dev_grid = policy.controls if gc.deviations is None else gc.deviations
    if not np.array_equal(dev_grid.points, policy.controls.points):
        raise InvalidInputError("deviation controls must match the policy's control grid")
    for j in range(len(dev_grid)):
        candidates.append((f"const[{dev_grid[j]!r}]", RelaxedPolicy.constant(policy.grid, policy.states, policy.controls, j)))
    if gc.best_response:
        pilot_cfg = GameConfig(gc.N, gc.pilot_paths or gc.npaths, gc.seed, best_response=False)
        pilot = simulate_nplayer(c, policy, pilot_cfg, seed=gc.seed_for("pilot"))
        r, n, k = pilot.X.shape
        others = MeasureFlow(policy.grid, pilot.X[:, 1:, :].reshape(r * (n - 1), k), pathwise=True)
        env = _SelfInclusiveFlow(policy.grid, others, gc.N, policy.states.nodes)
        dp = solve_dp(c, env, policy.states, policy.controls)
        candidates.append(("dp-best-response", dp.policy))
    for name, dev in candidates:
        d = simulate_nplayer(c, policy, gc, deviation=dev).costs[:, 0]
        diff = b - d
        rep.rows.append({
            "id": name,
            "cost": float(d.mean()),
            "gap": float(diff.mean()),
            "gap_stderr": float(diff.std(ddof=1) / np.sqrt(R)),
        })
    return rep
