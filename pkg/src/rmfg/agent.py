"""Representative agent: backward dynamic programming on the reflected chain.

For a frozen flow the value function is computed on a time x state grid by

    V(t_K, x) = g(x, mu_T)
    V(t_k, x) = min_u  f(t_k, x, mu_k, u) dt
                      + E[ V(t_{k+1}, Z^+) + h(t_k) Z^- ],
    Z = x + b dt + sigma sqrt(dt) xi,

with the expectation over ``xi`` taken by Gauss-Hermite quadrature and
``V(t_{k+1}, .)`` interpolated linearly between state nodes.  ``Z^-`` is the
projection deficit, i.e. the one-step increment of the reflection process, so
the boundary cost enters the Bellman step directly and no boundary condition
for a continuous-time equation is needed.

Mixing controls cannot improve on the best vertex: the one-step objective of a
mixture ``q`` is ``sum_i q_i * objective(u_i)``, linear in ``q``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .dynamics import (
    CoefficientSet,
    ControlGrid,
    PathBundle,
    RelaxedPolicy,
    StateGrid,
    control_coefficients,
    simulate_reflected,
)
from .errors import InvalidInputError, NumericError
from .measures import MeasureFlow, TimeGrid

__all__ = [
    "StateGrid",
    "DPSolution",
    "gauss_hermite",
    "one_step_objectives",
    "solve_dp",
    "cost_of_bundle",
    "evaluate_policy",
    "check_convexity_S",
    "choose_xmax",
]


def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and probability weights integrating against the standard normal."""
    if n < 1:
        raise InvalidInputError("quadrature needs at least one node")
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / w.sum()


@dataclass
class DPSolution:
    value: np.ndarray  # (time nodes, state nodes)
    policy: RelaxedPolicy
    value_at_x0: float
    clamp_mass: np.ndarray = field(repr=False)  # (steps, state nodes), quadrature mass clamped at xmax

    @property
    def max_clamp_mass(self) -> float:
        return float(self.clamp_mass.max()) if self.clamp_mass.size else 0.0

    def value_to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            x = self.policy.states.nodes
            w.writerow(["t"] + [repr(float(v)) for v in x])
            for k, t in enumerate(self.policy.grid.nodes):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.value[k]])


def one_step_objectives(c, cg: ControlGrid, sg: StateGrid, t: float, dt: float, mu_k, v_next, quad):
    """Bellman objective of every (state node, control) pair, shape ``(m, controls)``.

    Also returns the quadrature mass clamped at ``xmax`` per pair.
    """
    x = sg.nodes
    vals = control_coefficients(c, cg, t, x, mu_k)
    mean = (x[None, :] + vals["b"] * dt).T
    scale = np.sqrt(vals["sigma2"] * dt).T
    nodes, weights = quad
    h = float(c.h(t))
    if not np.isfinite(h):
        raise NumericError("non-finite boundary cost", (float(t),))
    cont, clamped = kernels.bellman_expectation(v_next, sg.xmax, mean, scale, nodes, weights, h)
    return vals["f"].T * dt + cont, clamped


def _terminal(c, sg, mu_T):
    x = sg.nodes
    v = np.broadcast_to(np.asarray(c.g(x, mu_T), dtype=float), x.shape).copy()
    if not np.all(np.isfinite(v)):
        i = int(np.flatnonzero(~np.isfinite(v))[0])
        raise NumericError("non-finite terminal cost", ("terminal", i))
    return v


def solve_dp(
    c: CoefficientSet,
    mu,
    sg: StateGrid,
    cg: ControlGrid,
    *,
    quad_nodes: int = 7,
    tie_tol: float = 1e-12,
) -> DPSolution:
    """Backward induction for the frozen flow ``mu``.

    ``mu`` needs a ``grid`` and ``marginal(k)``; a :class:`MeasureFlow` is the
    usual argument.  Ties at the argmin (relative tolerance ``tie_tol``)
    become a uniform mixture over the tied controls.
    """
    grid: TimeGrid = mu.grid
    if not (0 <= c.x0 <= sg.xmax):
        raise InvalidInputError(f"initial state {c.x0} lies outside the state grid [0, {sg.xmax}]")
    quad = gauss_hermite(quad_nodes)
    K, m, n = grid.steps, sg.m, len(cg)
    V = np.empty((K + 1, m))
    W = np.empty((K, m, n))
    clamp = np.empty((K, m))
    V[K] = _terminal(c, sg, mu.marginal(K))
    for k in range(K - 1, -1, -1):
        obj, cl = one_step_objectives(c, cg, sg, grid.nodes[k], grid.dt, mu.marginal(k), V[k + 1], quad)
        best = obj.min(axis=1)
        if not np.all(np.isfinite(best)):
            i = int(np.flatnonzero(~np.isfinite(best))[0])
            raise NumericError("non-finite value", (k, i))
        tied = obj <= (best + tie_tol * (1.0 + np.abs(best)))[:, None]
        W[k] = tied / tied.sum(axis=1, keepdims=True)
        V[k] = best
        clamp[k] = np.sum(W[k] * cl, axis=1)
    policy = RelaxedPolicy(grid, sg, cg, W)
    v0 = float(np.interp(c.x0, sg.nodes, V[0]))
    return DPSolution(value=V, policy=policy, value_at_x0=v0, clamp_mass=clamp)


def cost_of_bundle(c: CoefficientSet, mu, pb: PathBundle) -> tuple[float, float]:
    """Sample mean and standard error of the realized path costs.

    Per path: ``sum_k (sum_i q_ki f(t_k, X_k, mu_k, u_i)) dt + sum_k h(t_k) dK_k
    + g(X_T, mu_T)``, where ``dK_k`` is the reflection increment over
    ``[t_k, t_{k+1}]``.  ``mu=None`` uses the measure the bundle was simulated with.
    """
    costs = path_costs(c, mu, pb)
    n = costs.size
    se = float(costs.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(costs.mean()), se


def path_costs(c: CoefficientSet, mu, pb: PathBundle) -> np.ndarray:
    grid = pb.grid
    if mu is not None and mu.grid != grid:
        raise InvalidInputError(f"flow grid {mu.grid} does not match bundle grid {grid}")
    measure = pb.measure_at if mu is None else mu.marginal
    cg = pb.policy.controls
    dt = grid.dt
    total = np.zeros(pb.npaths)
    dK = pb.dK
    for k in range(grid.steps):
        t = grid.nodes[k]
        q = pb.policy.weights[pb.policy_time[k]][pb.state_index[:, k]]
        active = q.max(axis=0) > 0
        f = control_coefficients(c, cg, t, pb.X[:, k], measure(k), which=("f",), active=active)["f"]
        total += np.sum(q.T * f, axis=0) * dt
        total += float(c.h(t)) * dK[:, k]
    gT = np.broadcast_to(np.asarray(c.g(pb.X[:, -1], measure(grid.steps)), dtype=float), total.shape)
    return total + gT


def evaluate_policy(c: CoefficientSet, mu: MeasureFlow, policy: RelaxedPolicy, npaths: int, seed: int,
                    chunk: int = 50_000) -> tuple[float, float]:
    """Monte Carlo cost of ``policy`` against the frozen flow ``mu``."""
    parts = []
    for off in range(0, npaths, chunk):
        pb = simulate_reflected(c, mu, policy, min(chunk, npaths - off), seed, path_offset=off)
        parts.append(path_costs(c, mu, pb))
    costs = np.concatenate(parts)
    se = float(costs.std(ddof=1) / np.sqrt(costs.size)) if costs.size > 1 else 0.0
    return float(costs.mean()), se


def check_convexity_S(c: CoefficientSet, cg: ControlGrid, t: float, x: float, mu, tol: float | None = None) -> str:
    """Discrete convexity test of ``{(sigma^2, b, e) : e >= f}`` at ``(t, x)``.

    Every pairwise midpoint of the image points in the ``(sigma^2, b)`` plane
    must be matched, within ``tol``, by an image point whose running cost does
    not exceed the averaged cost by more than ``tol``.  ``tol`` defaults to 4%
    of the image diameter.  Returns ``"convex"``, ``"not-convex"`` (some
    midpoint is farther than ``10 * tol`` from every admissible point) or
    ``"inconclusive"``.
    """
    if len(cg) == 1:
        return "convex"
    xa = np.array([float(x)])
    vals = control_coefficients(c, cg, t, xa, mu)
    P = np.stack([vals["sigma2"][:, 0], vals["b"][:, 0]], axis=1)
    F = vals["f"][:, 0]
    diam = float(np.max(np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)))
    if tol is None:
        tol = 0.04 * diam
    if diam == 0.0:
        # all controls act identically; the epigraph is convex
        return "convex"
    verdict = "convex"
    n = len(cg)
    for i in range(n):
        for j in range(i + 1, n):
            mid = 0.5 * (P[i] + P[j])
            e = 0.5 * (F[i] + F[j])
            d = np.linalg.norm(P - mid, axis=1)
            admissible = F <= e + tol
            if np.any(admissible & (d <= tol)):
                continue
            gap = d[admissible].min() if admissible.any() else np.inf
            if gap > 10 * tol:
                return "not-convex"
            verdict = "inconclusive"
    return verdict


def choose_xmax(c: CoefficientSet, grid: TimeGrid, cg: ControlGrid, *, prob: float = 1e-3,
                npaths: int = 4000, seed: int = 0, margin: float = 1.25) -> float:
    """State-grid cap from a pilot run of the uniformly mixing policy.

    Takes the ``1 - prob`` quantile of the running maximum of the pilot paths
    times ``margin``.
    """
    policy = RelaxedPolicy.uniform(grid, StateGrid(1.0, 2), cg)
    pb = simulate_reflected(c, None, policy, npaths, seed)
    q = float(np.quantile(pb.X.max(axis=1), 1.0 - prob))
    return max(margin * q, c.x0 + 1.0)
