"""Fixed-point layer: best-response map on measure flows and damped Picard iteration.

A candidate flow is a particle flow.  The best-response map solves the
agent's problem against it and simulates the optimal policy; each Picard
step then swaps a fraction ``damping`` of the particles for best-response
particles, which is a convex combination at the level of measures.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .agent import DPSolution, choose_xmax, solve_dp
from .dynamics import CoefficientSet, ControlGrid, RelaxedPolicy, StateGrid, simulate_reflected, truncate_coefficients
from .errors import InvalidInputError
from .measures import MeasureFlow, TimeGrid, flow_distance, split_half_noise
from .seeding import derive_seed

__all__ = [
    "MFGConfig",
    "MFGSolution",
    "phi_map",
    "initial_flow",
    "solve_fixed_point",
    "solve_with_truncation",
    "truncation_gaps",
    "residual",
    "self_consistency",
    "config_for",
]


@dataclass(frozen=True)
class MFGConfig:
    grid: TimeGrid
    states: StateGrid
    controls: ControlGrid
    damping: float = 0.5
    tol: float = 0.05
    max_iter: int = 30
    npaths: int = 20000
    seed: int = 0
    schedule: tuple = ()
    quad_nodes: int = 7

    def __post_init__(self):
        if not (0 < self.damping <= 1):
            raise InvalidInputError(f"damping must lie in (0, 1], got {self.damping}")
        if not (self.tol > 0):
            raise InvalidInputError(f"tolerance must be positive, got {self.tol}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 0:
            raise InvalidInputError(f"max_iter must be a nonnegative integer, got {self.max_iter}")
        if int(self.npaths) != self.npaths or self.npaths < 2:
            raise InvalidInputError(f"npaths must be an integer >= 2, got {self.npaths}")
        s = tuple(float(v) for v in self.schedule)
        if any(b <= a for a, b in zip(s, s[1:])) or any(v <= 0 for v in s):
            raise InvalidInputError(f"truncation schedule must be positive and strictly increasing, got {s}")
        object.__setattr__(self, "schedule", s)

    def seed_for(self, *labels) -> int:
        return derive_seed(self.seed, "mfg", *labels)

    def replace(self, **kw) -> "MFGConfig":
        return replace(self, **kw)

    def echo(self) -> dict:
        return {
            "horizon": self.grid.horizon,
            "steps": self.grid.steps,
            "xmax": self.states.xmax,
            "state_nodes": self.states.m,
            "controls": self.controls.points.ravel().tolist() if self.controls.dim == 1 else self.controls.points.tolist(),
            "damping": self.damping,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "npaths": self.npaths,
            "seed": self.seed,
            "schedule": list(self.schedule),
            "quad_nodes": self.quad_nodes,
        }


@dataclass
class MFGSolution:
    flow: MeasureFlow
    policy: RelaxedPolicy
    value: float
    residuals: list
    converged: bool
    dp: DPSolution = field(repr=False)
    noise: float = float("nan")
    # share of simulated (path, step) states beyond the state-grid cap in the final best response
    clamp_fraction: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    def residuals_to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for i, r in enumerate(self.residuals):
                w.writerow([i, repr(float(r))])


def config_for(c: CoefficientSet, grid: TimeGrid, controls: ControlGrid, *, dx: float = 0.025,
               xmax: Optional[float] = None, seed: int = 0, **kw) -> MFGConfig:
    """Config with a state grid sized from a pilot run (see :func:`choose_xmax`)."""
    if xmax is None:
        xmax = choose_xmax(c, grid, controls, seed=derive_seed(seed, "xmax"))
    m = int(np.ceil(xmax / dx)) + 1
    return MFGConfig(grid=grid, states=StateGrid(xmax, m), controls=controls, seed=seed, **kw)


def phi_map(c: CoefficientSet, mu: MeasureFlow, cfg: MFGConfig, *, seed: Optional[int] = None):
    """Best response to ``mu`` and the particle flow it generates.

    Every call uses the same noise (``seed`` defaults to the config's Phi
    stream), so particle ``i`` of the output always follows noise path ``i``.
    """
    out, dp, _ = _phi(c, mu, cfg, seed)
    return out, dp


def _phi(c, mu, cfg, seed=None):
    if mu.grid != cfg.grid:
        raise InvalidInputError(f"flow grid {mu.grid} does not match config grid {cfg.grid}")
    dp = solve_dp(c, mu, cfg.states, cfg.controls, quad_nodes=cfg.quad_nodes)
    s = cfg.seed_for("phi") if seed is None else seed
    pb = simulate_reflected(c, mu, dp.policy, cfg.npaths, s)
    return pb.flow(), dp, pb.state_clamps / (pb.npaths * cfg.grid.steps)


def initial_flow(c: CoefficientSet, cfg: MFGConfig) -> MeasureFlow:
    """Self-interacting particle flow under the uniformly mixing policy."""
    pol = RelaxedPolicy.uniform(cfg.grid, cfg.states, cfg.controls)
    return simulate_reflected(c, None, pol, cfg.npaths, cfg.seed_for("init")).flow()


def _mix(mu: MeasureFlow, new: MeasureFlow, lam: float, seed: int) -> MeasureFlow:
    if lam >= 1.0:
        return new
    n = mu.nparticles
    take = np.random.default_rng(seed).permutation(n)[: int(round(lam * n))]
    v = mu.values.copy()
    v[take] = new.values[take]
    return MeasureFlow(mu.grid, v, pathwise=True)


def solve_fixed_point(c: CoefficientSet, cfg: MFGConfig, init: Optional[MeasureFlow] = None) -> MFGSolution:
    """Damped Picard iteration ``mu <- (1 - damping) mu + damping Phi(mu)``.

    Stops as soon as ``sup_t W2(mu_t, Phi(mu)_t) <= tol``; the reported flow
    is that ``mu`` and the reported policy its best response.
    """
    mu = initial_flow(c, cfg) if init is None else init
    if mu.nparticles != cfg.npaths:
        raise InvalidInputError(f"initial flow has {mu.nparticles} particles, config wants {cfg.npaths}")
    residuals: list[float] = []
    if cfg.max_iter == 0:
        dp = solve_dp(c, mu, cfg.states, cfg.controls, quad_nodes=cfg.quad_nodes)
        return MFGSolution(mu, dp.policy, dp.value_at_x0, residuals, False, dp, split_half_noise(mu))
    for k in range(cfg.max_iter):
        new, dp, clamps = _phi(c, mu, cfg)
        r = flow_distance(mu, new, "sup")
        residuals.append(r)
        if r <= cfg.tol or k == cfg.max_iter - 1:
            break
        mu = _mix(mu, new, cfg.damping, cfg.seed_for("mix", k))
    return MFGSolution(
        flow=mu,
        policy=dp.policy,
        value=dp.value_at_x0,
        residuals=residuals,
        converged=residuals[-1] <= cfg.tol,
        dp=dp,
        noise=split_half_noise(new),
        clamp_fraction=clamps,
    )


def residual(c: CoefficientSet, mu: MeasureFlow, cfg: MFGConfig) -> float:
    """``sup_t W2(mu_t, Phi(mu)_t)`` with the config's Phi noise."""
    return flow_distance(mu, phi_map(c, mu, cfg)[0], "sup")


def self_consistency(c: CoefficientSet, sol: MFGSolution, cfg: MFGConfig) -> tuple[float, float]:
    """Distance between the reported flow and a fresh-noise re-simulation of
    the reported policy against it, with the re-simulation's noise scale."""
    pb = simulate_reflected(c, sol.flow, sol.policy, cfg.npaths, cfg.seed_for("recheck"))
    fresh = pb.flow()
    return flow_distance(sol.flow, fresh, "sup"), split_half_noise(fresh)


def solve_with_truncation(c: CoefficientSet, cfg: MFGConfig, schedule: Optional[Sequence[float]] = None):
    """Fixed points for the truncated coefficients at every level of the schedule.

    Each level warm-starts from the previous level's flow.  Returns a list of
    ``(level, MFGSolution)``; see :func:`truncation_gaps` for the distances
    between consecutive solutions.
    """
    levels = tuple(cfg.schedule if schedule is None else schedule)
    if not levels:
        raise InvalidInputError("truncation schedule is empty")
    MFGConfig(cfg.grid, cfg.states, cfg.controls, schedule=levels)  # validates ordering
    out = []
    flow = None
    for n in levels:
        sol = solve_fixed_point(truncate_coefficients(c, n), cfg, init=flow)
        out.append((float(n), sol))
        flow = sol.flow
    return out


def truncation_gaps(levels) -> list[float]:
    return [flow_distance(a.flow, b.flow, "sup") for (_, a), (_, b) in zip(levels, levels[1:])]
