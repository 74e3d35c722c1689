"""Numerical checks of the defining identities of reflected controlled dynamics.

Every check returns a report and never raises on a failed check.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .agent import path_costs
from .dynamics import CoefficientSet, PathBundle, RelaxedPolicy, control_coefficients, simulate_reflected
from .errors import InvalidInputError
from .measures import MeasureFlow, TimeGrid, flow_sup_moment

__all__ = [
    "TestFunction",
    "default_basis",
    "check_skorokhod",
    "MartingaleReport",
    "martingale_increments",
    "check_martingale",
    "calibrate_allowance",
    "DEFAULT_PAIRS",
    "default_pairs",
    "moment_bound",
    "check_moment_bounds",
    "check_boundary_integral_convergence",
    "probe_continuity",
]


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class TestFunction:
    """A bounded C^2 function with closed-form first and second derivatives.

    ``jet(x)`` returns ``(phi, phi', phi'')`` sharing the expensive terms.
    """

    __test__ = False  # not a pytest class

    name: str
    jet: Callable[[np.ndarray], tuple]

    def f(self, x):
        return self.jet(x)[0]

    def d1(self, x):
        return self.jet(x)[1]

    def d2(self, x):
        return self.jet(x)[2]


def _const():
    def jet(x):
        z = np.zeros_like(x)
        return np.ones_like(x), z, z

    return TestFunction("const", jet)


def _ramp(a, b, k=8.0):
    # smoothed clip(x - a, 0, b - a)
    def jet(x):
        za, zb = k * (x - a), k * (x - b)
        sa, sb = _sig(za), _sig(zb)
        f = (np.logaddexp(0, za) - np.logaddexp(0, zb)) / k
        return f, sa - sb, k * (sa * (1 - sa) - sb * (1 - sb))

    return TestFunction(f"ramp[{a:g},{b:g}]", jet)


def _bump(c, w=0.25):
    def jet(x):
        d = x - c
        f = np.exp(-(d * d) / w)
        return f, (-2 / w) * d * f, ((4 / w**2) * d * d - 2 / w) * f

    return TestFunction(f"bump[{c:g}]", jet)


def _logistic(c, k=4.0):
    def jet(x):
        s = _sig(k * (x - c))
        ds = s * (1 - s)
        return s, k * ds, k * k * ds * (1 - 2 * s)

    return TestFunction(f"sigmoid[{c:g}]", jet)


def default_basis() -> list[TestFunction]:
    """Constant, two smoothed ramps, five Gaussian bumps and two logistic steps."""
    return (
        [_const(), _ramp(0.0, 1.0), _ramp(0.5, 2.0)]
        + [_bump(c) for c in (0.0, 0.25, 0.5, 1.0, 1.5)]
        + [_logistic(0.5), _logistic(1.0)]
    )


# (s, t) as fractions of the horizon
DEFAULT_PAIRS = ((0.0, 0.25), (0.25, 0.5), (0.25, 0.75), (0.5, 1.0), (0.0, 1.0))


def default_pairs(grid: TimeGrid) -> list:
    """:data:`DEFAULT_PAIRS` scaled to the horizon and snapped to grid nodes."""
    t = grid.nodes
    snap = lambda a: float(t[int(round(a * grid.steps))])
    return [(snap(a), snap(b)) for a, b in DEFAULT_PAIRS]


def check_skorokhod(pb: PathBundle, tol: float = 0.0) -> dict:
    """Nonnegativity of X, monotonicity of K from 0, and ``max_p sum_k X_k dK_k``.

    The increment ``dK_k = K_k - K_{k-1}`` is paired with the node where it
    ends.
    """
    X, K = np.asarray(pb.X), np.asarray(pb.K)
    neg = float(max(0.0, -X.min()))
    dK = np.diff(K, axis=1)
    dec = float(max(0.0, -dK.min())) if dK.size else 0.0
    start = float(np.abs(K[:, 0]).max())
    comp = float(np.max(np.sum(X[:, 1:] * dK, axis=1))) if dK.size else 0.0
    return {
        "max_negativity": neg,
        "max_decrease": dec,
        "max_start": start,
        "max_complementarity": comp,
        "passed": neg == 0.0 and dec == 0.0 and start == 0.0 and comp <= tol,
    }


@dataclass
class MartingaleReport:
    rows: list = field(default_factory=list)

    @property
    def pass_fraction(self) -> float:
        return float(np.mean([r["pass"] for r in self.rows])) if self.rows else 1.0

    @property
    def failures(self) -> list:
        return [r for r in self.rows if not r["pass"]]

    def to_csv(self, path) -> None:
        keys = ["phi", "s", "t", "H", "statistic", "stderr", "allowance", "pass"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in self.rows:
                w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])


def _effective_path_coefficients(pb: PathBundle, c: CoefficientSet, mu):
    grid = pb.grid
    measure = pb.measure_at if mu is None else (lambda k: mu.marginal(k))
    n, K = pb.npaths, grid.steps
    drift = np.empty((n, K))
    var = np.empty((n, K))
    cg = pb.policy.controls
    for k in range(K):
        q = pb.policy.weights[pb.policy_time[k]][pb.state_index[:, k]]
        active = q.max(axis=0) > 0
        v = control_coefficients(c, cg, grid.nodes[k], pb.X[:, k], measure(k), which=("b", "sigma2"), active=active)
        drift[:, k] = np.sum(q.T * v["b"], axis=0)
        var[:, k] = np.sum(q.T * v["sigma2"], axis=0)
    return drift, var


def martingale_increments(pb: PathBundle, c: CoefficientSet, mu, phi: TestFunction, *, coeffs=None, rows=None):
    """Discrete ``M^phi`` on every node, shape ``(paths, nodes)``.

    ``M_n = phi(X_n) - phi(X_0) - sum_{j<n} L phi(t_j, X_j) dt
    - sum_{j<n} phi'(X_{j+1}) dK_{j+1}``, where ``L`` uses the effective
    drift and variance of the applied mixture.  ``rows`` restricts the
    computation to a slice of paths.
    """
    drift, var = _effective_path_coefficients(pb, c, mu) if coeffs is None else coeffs
    sl = slice(None) if rows is None else rows
    X, drift, var = pb.X[sl], drift[sl], var[sl]
    F, D1, D2 = phi.jet(X)
    inc = drift * D1[:, :-1]
    inc += 0.5 * var * D2[:, :-1]
    inc *= pb.grid.dt
    inc += D1[:, 1:] * np.diff(pb.K[sl], axis=1)
    M = np.empty_like(X)
    M[:, 0] = 0.0
    np.cumsum(inc, axis=1, out=M[:, 1:])
    np.subtract(F, M, out=M)
    M -= F[:, :1]
    return M


def _statistics(pb, c, mu, basis, pairs, coeffs, chunk=10_000):
    grid = pb.grid
    idx = []
    for s, t in pairs:
        ks, kt = grid.index_of(s), grid.index_of(t)
        if not ks < kt:
            raise InvalidInputError(f"pair ({s}, {t}) must satisfy s < t")
        idx.append((float(s), float(t), ks, kt))
    n = pb.npaths
    cells = {}
    # path chunks keep the temporaries cache-sized
    for lo in range(0, n, chunk):
        rows = slice(lo, min(n, lo + chunk))
        Xc = pb.X[rows]
        for phi in basis:
            M = martingale_increments(pb, c, mu, phi, coeffs=coeffs, rows=rows)
            for s, t, ks, kt in idx:
                D = M[:, kt] - M[:, ks]
                for hname, H in (("1", None), ("sigmoid(X_s)", _sig(Xc[:, ks]))):
                    cells.setdefault((phi.name, s, t, hname), []).append(D if H is None else D * H)
    out = []
    for (name, s, t, hname), parts in cells.items():
        v = np.concatenate(parts)
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("inf")
        out.append((name, s, t, hname, float(v.mean()), se))
    return out


def check_martingale(
    pb: PathBundle,
    c: CoefficientSet,
    mu: Optional[MeasureFlow],
    basis: Optional[Sequence[TestFunction]] = None,
    pairs: Optional[Sequence] = None,
    allowance=0.0,
) -> MartingaleReport:
    """Test ``E[(M_t - M_s) H] = 0`` for every test function, pair and ``H``.

    ``H`` runs over ``1`` and ``sigmoid(X_s)``; ``pairs`` defaults to
    :func:`default_pairs`.  A cell passes when
    ``|statistic| <= 3 stderr + allowance``; ``allowance`` is a scalar or a
    list aligned with the cells (see :func:`calibrate_allowance`).
    ``mu=None`` uses the measure the bundle was simulated with.
    """
    if mu is not None and mu.grid != pb.grid:
        raise InvalidInputError(f"flow grid {mu.grid} does not match bundle grid {pb.grid}")
    basis = default_basis() if basis is None else list(basis)
    pairs = default_pairs(pb.grid) if pairs is None else pairs
    coeffs = _effective_path_coefficients(pb, c, mu)
    stats = _statistics(pb, c, mu, basis, pairs, coeffs)
    allow = np.broadcast_to(np.asarray(allowance, dtype=float), (len(stats),))
    rep = MartingaleReport()
    for (name, s, t, hname, stat, se), a in zip(stats, allow):
        rep.rows.append({
            "phi": name, "s": s, "t": t, "H": hname, "statistic": stat, "stderr": se,
            "allowance": float(a), "pass": bool(abs(stat) <= 3 * se + a),
        })
    return rep


def calibrate_allowance(
    c: CoefficientSet,
    mu: Optional[MeasureFlow],
    policy: RelaxedPolicy,
    npaths: int,
    seed: int,
    basis: Optional[Sequence[TestFunction]] = None,
    pairs: Optional[Sequence] = None,
    order: float = 0.5,
) -> np.ndarray:
    """Per-cell discretization allowance from a half-step run.

    Runs the policy at the base step and at half the step with shared
    Brownian increments.  With weak order ``order`` the bias at the base step
    is about ``|stat_base - stat_half| / (1 - 2**-order)``; the default
    ``order=0.5`` is the weak order of the projected scheme near the boundary.
    """
    basis = default_basis() if basis is None else list(basis)
    grid = policy.grid
    pairs = default_pairs(grid) if pairs is None else pairs
    coarse = simulate_reflected(c, mu, policy, npaths, seed, refine=2)
    fine = simulate_reflected(c, mu, policy, npaths, seed, grid=grid.refined(2))
    # both bundles know how they read mu, so the coefficients come from measure_at
    a = _statistics(coarse, c, None, basis, pairs, _effective_path_coefficients(coarse, c, None))
    b = _statistics(fine, c, None, basis, pairs, _effective_path_coefficients(fine, c, None))
    diff = np.array([abs(x[4] - y[4]) for x, y in zip(a, b)])
    return diff / (1.0 - 2.0 ** (-order))


# ---- moment bounds ---------------------------------------------------------


def log_moment_bound(C2: float, T: float, q: float, x0: float, M: float) -> float:
    """Log of an explicit bound on ``E(||X||_T^p + ||K||_T^p)``, ``p = 2q``.

    ``M`` bounds ``sup_s (|mu_s|^2)^q``.  Derivation: with
    ``Y = x0 + int b + int sigma dW`` the Skorokhod map gives
    ``||K|| <= ||Y - x0||`` and ``||X|| <= x0 + 2 ||Y - x0||``.  Hoelder,
    Doob and Burkholder-Davis-Gundy with the growth bound
    ``|b|, |sigma| <= C2 (1 + |x| + |mu|_2)`` give
    ``E||Y - x0||_t^p <= A int_0^t (1 + M + E||X||_s^p) ds`` with
    ``A = 2^{p-1} (T^{p-1} + D_p T^{p/2-1}) 3^{p-1} C2^p`` and
    ``D_p = (p/(p-1))^p (p(p-1)/2)^{p/2}``; Gronwall closes the estimate.
    """
    p = 2.0 * q
    if p < 2:
        raise InvalidInputError("moment order q must be at least 1")
    Dp = (p / (p - 1)) ** p * (p * (p - 1) / 2) ** (p / 2)
    A = 2 ** (p - 1) * (T ** (p - 1) + Dp * T ** (p / 2 - 1)) * 3 ** (p - 1) * C2**p
    rate = 2 ** (2 * p - 1) * A * T
    # phi(T) <= (2^{p-1} x0^p + rate (1 + M)) e^{rate}
    log_phi = math.log(2 ** (p - 1) * x0**p + rate * (1.0 + M)) + rate
    # total <= phi + A T (1 + M + phi) = (1 + A T) phi + A T (1 + M)
    return float(np.logaddexp(math.log1p(A * T) + log_phi, math.log(A * T * (1.0 + M))))


def moment_bound(C2: float, T: float, q: float, x0: float, M: float) -> float:
    return math.exp(min(log_moment_bound(C2, T, q, x0, M), 709.0))


def check_moment_bounds(pb: PathBundle, c: CoefficientSet, q: float = 1.0, mu: Optional[MeasureFlow] = None) -> dict:
    """Empirical ``E(||X||_T^{2q} + ||K||_T^{2q})`` against the explicit bound.

    The measure term is ``||mu||_T^{2q}``, the path-space moment of ``mu``
    (default: the bundle's own flow, or the flow it was simulated against),
    which dominates ``sup_s (|mu_s|^2)^q``.
    """
    p = 2.0 * q
    T = pb.grid.horizon
    lhs = float(np.mean(np.abs(pb.X).max(axis=1) ** p + np.abs(pb.K).max(axis=1) ** p))
    flow = mu if mu is not None else (pb.mu if pb.mu is not None else pb.flow())
    M = flow_sup_moment(flow, p, flow.grid.horizon)
    logb = log_moment_bound(c.C2, T, q, c.x0, M)
    log_ratio = (math.log(lhs) if lhs > 0 else -math.inf) - logb
    return {
        "lhs": lhs,
        "mu_moment": M,
        "log_bound": logb,
        "bound": math.exp(min(logb, 709.0)),
        "ratio": math.exp(min(log_ratio, 709.0)),
        "passed": bool(log_ratio <= 0.0),
    }


# ---- refinement and continuity --------------------------------------------


def check_boundary_integral_convergence(
    c: CoefficientSet,
    mu: Optional[MeasureFlow],
    policy: RelaxedPolicy,
    dt_levels: Sequence[float],
    seed: int,
    npaths: int = 20000,
) -> dict:
    """Coupled-refinement study of ``E sum X dK`` and ``E int h dK``.

    Levels must divide the horizon and refine one another; every level sums
    the normals of the finest level, so all levels share one Brownian path.
    Passes when the Cauchy differences between consecutive levels do not grow.
    """
    if len(dt_levels) < 3:
        raise InvalidInputError("need at least 3 refinement levels")
    T = policy.grid.horizon
    steps = [int(round(T / d)) for d in dt_levels]
    if any(abs(s * d - T) > 1e-9 * T for s, d in zip(steps, dt_levels)):
        raise InvalidInputError(f"levels {list(dt_levels)} do not divide the horizon {T}")
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise InvalidInputError("levels must be strictly decreasing step sizes")
    finest = steps[-1]
    if any(finest % s for s in steps):
        raise InvalidInputError("every level must be refined by the finest level")
    xdk, hdk = [], []
    for s in steps:
        grid = TimeGrid(T, s)
        pb = simulate_reflected(c, mu, policy, npaths, seed, grid=grid, refine=finest // s)
        dK = pb.dK
        xdk.append(float(np.mean(np.sum(pb.X[:, 1:] * dK, axis=1))))
        hv = np.array([float(c.h(t)) for t in grid.nodes[:-1]])
        hdk.append(float(np.mean(dK @ hv)))
    dx = [abs(b - a) for a, b in zip(xdk, xdk[1:])]
    dh = [abs(b - a) for a, b in zip(hdk, hdk[1:])]
    mono = all(b <= a for a, b in zip(dx, dx[1:])) and all(b <= a for a, b in zip(dh, dh[1:]))
    ratios = [a / b if b > 0 else (math.inf if a > 0 else 1.0) for a, b in zip(dh, dh[1:])]
    return {
        "dt": list(map(float, dt_levels)),
        "x_dk": xdk,
        "h_dk": hdk,
        "cauchy_x_dk": dx,
        "cauchy_h_dk": dh,
        "shrink_ratios": ratios,
        "passed": bool(mono),
    }


def probe_continuity(
    c: CoefficientSet,
    mu: MeasureFlow,
    policy: RelaxedPolicy,
    shifts: Sequence[float],
    seed: int,
    npaths: int = 20000,
) -> dict:
    """Cost sensitivity of a frozen policy to translating the flow.

    Translating every sample by ``c0`` moves the flow by exactly ``c0`` in
    W2.  All evaluations share the noise, so ``shift 0`` reproduces the base
    cost exactly.  Passes when every ratio ``|dJ| / c0`` stays below the
    envelope ``r0 (1 + c0 / c_min)`` set by the smallest positive shift.
    """
    base = _mean_cost(c, mu, policy, npaths, seed)
    rows = []
    for s in shifts:
        s = float(s)
        J = base if s == 0 else _mean_cost(c, mu.shifted(s), policy, npaths, seed)
        dJ = J - base
        rows.append({"shift": s, "cost": J, "delta": dJ, "ratio": abs(dJ) / s if s > 0 else 0.0})
    pos = [r for r in rows if r["shift"] > 0]
    passed = True
    if pos:
        cmin = min(r["shift"] for r in pos)
        r0 = max(r["ratio"] for r in pos if r["shift"] == cmin)
        for r in pos:
            r["envelope"] = r0 * (1 + r["shift"] / cmin)
            passed &= r["ratio"] <= r["envelope"] + 1e-12
    return {"base_cost": base, "rows": rows, "passed": bool(passed)}


def _mean_cost(c, mu, policy, npaths, seed):
    pb = simulate_reflected(c, mu, policy, npaths, seed)
    return float(np.mean(path_costs(c, mu, pb)))
