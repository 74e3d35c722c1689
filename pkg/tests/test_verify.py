import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmfg.dynamics import simulate_reflected
from rmfg.errors import InvalidInputError
from rmfg.measures import MeasureFlow, TimeGrid
from rmfg.scenarios import get_scenario, scenario_names
from rmfg.verify import (
    TestFunction,
    check_boundary_integral_convergence,
    check_martingale,
    check_moment_bounds,
    check_skorokhod,
    default_basis,
    default_pairs,
    log_moment_bound,
    martingale_increments,
    moment_bound,
    probe_continuity,
)

from conftest import uniform_policy

IDENTITY = TestFunction("id", lambda x: (x.copy(), np.ones_like(x), np.zeros_like(x)))


@pytest.mark.parametrize("phi", default_basis(), ids=lambda p: p.name)
@given(x=st.floats(0, 3))
@settings(max_examples=30, deadline=None)
def test_basis_jets_match_finite_differences(phi, x):
    h = 1e-4
    xs = np.array([x - h, x, x + h])
    f, d1, d2 = phi.jet(xs)
    assert d1[1] == pytest.approx((f[2] - f[0]) / (2 * h), rel=1e-5, abs=1e-6)
    assert d2[1] == pytest.approx((d1[2] - d1[0]) / (2 * h), rel=1e-4, abs=1e-5)
    np.testing.assert_allclose(phi.f(xs), f)


def test_basis_size_and_pairs():
    assert len(default_basis()) >= 8
    pairs = default_pairs(TimeGrid(2.0, 8))
    assert len(pairs) >= 4
    assert all(s < t for s, t in pairs)
    assert (0.0, 2.0) in pairs


def _bundle(name="reflected-bm", n=2000, steps=50, seed=0):
    sc = get_scenario(name)
    c, cg = sc.coefficients(), sc.control_grid()
    grid = TimeGrid(1.0, steps)
    return c, simulate_reflected(c, None, uniform_policy(grid, cg), n, seed)


@pytest.mark.parametrize("name", scenario_names())
def test_simulated_bundles_satisfy_skorokhod_exactly(name):
    _, pb = _bundle(name, n=500)
    rep = check_skorokhod(pb)
    assert rep["passed"] and rep["max_complementarity"] == 0.0


def test_skorokhod_detects_violations():
    _, pb = _bundle(n=50)
    pb.X[3, 7] = -1e-9
    assert not check_skorokhod(pb)["passed"]
    _, pb = _bundle(n=50)
    pb.K[4, 10:] += 0.1
    rep = check_skorokhod(pb)
    assert not rep["passed"] and rep["max_complementarity"] > 0


def test_martingale_increments_hand_computed():
    c, pb = _bundle(n=3, steps=4)
    M = martingale_increments(pb, c, None, IDENTITY)
    # identity test function: M_n = X_n - X_0 - K_n (zero drift)
    np.testing.assert_allclose(M, pb.X - pb.X[:, :1] - pb.K, atol=1e-14)
    sq = TestFunction("sq", lambda x: (x * x, 2 * x, 2 + 0 * x))
    M2 = martingale_increments(pb, c, None, sq)
    dt = pb.grid.dt
    ref = pb.X**2 - pb.X[:, :1] ** 2
    ref[:, 1:] -= np.cumsum(np.full((3, 4), dt) + 2 * pb.X[:, 1:] * pb.dK, axis=1)
    np.testing.assert_allclose(M2, ref, atol=1e-13)


def test_identity_martingale_and_corrupted_bundle():
    c, pb = _bundle(n=20000)
    ok = check_martingale(pb, c, None, basis=[IDENTITY])
    assert ok.pass_fraction == 1.0
    pb.K[:] = 0.0
    bad = check_martingale(pb, c, None, basis=[IDENTITY])
    assert bad.pass_fraction == 0.0


def test_martingale_report_csv(tmp_path):
    c, pb = _bundle(n=300)
    rep = check_martingale(pb, c, None)
    assert len(rep.rows) == len(default_basis()) * len(default_pairs(pb.grid)) * 2
    rep.to_csv(tmp_path / "m.csv")
    assert len((tmp_path / "m.csv").read_text().splitlines()) == len(rep.rows) + 1
    with pytest.raises(InvalidInputError):
        check_martingale(pb, c, None, pairs=[(0.5, 0.5)])


def test_moment_bound_formula_q1():
    # q = 1: D_2 = 4, A = 6 (T + 4) C2^2 ... written out independently
    C2, T, x0, M = 0.3, 1.0, 0.5, 2.0
    A = 2 * (T + 4) * 3 * C2**2
    rate = 8 * A * T
    phi = (2 * x0**2 + rate * (1 + M)) * math.exp(rate)
    ref = (1 + A * T) * phi + A * T * (1 + M)
    assert moment_bound(C2, T, 1, x0, M) == pytest.approx(ref, rel=1e-12)
    assert log_moment_bound(C2, T, 1, x0, M) == pytest.approx(math.log(ref), rel=1e-12)
    with pytest.raises(InvalidInputError):
        log_moment_bound(C2, T, 0.5, x0, M)


@given(st.floats(0.01, 5), st.floats(0.01, 5))
@settings(max_examples=50, deadline=None)
def test_moment_bound_monotone_in_constants(a, b):
    lo, hi = sorted((a, b))
    assert log_moment_bound(lo, 1.0, 1, 1.0, 1.0) <= log_moment_bound(hi, 1.0, 1, 1.0, 1.0)
    assert log_moment_bound(1.0, lo, 1, 1.0, 1.0) <= log_moment_bound(1.0, hi, 1, 1.0, 1.0)


@pytest.mark.parametrize("name", scenario_names())
def test_moment_bounds_hold_with_honest_constants(name):
    c, pb = _bundle(name, n=1000)
    assert check_moment_bounds(pb, c)["passed"]


def test_moment_bound_fails_with_understated_constant():
    c, pb = _bundle(n=2000)
    rep = check_moment_bounds(pb, c.replace(C2=0.01))
    assert not rep["passed"] and rep["ratio"] > 1


def test_boundary_integral_refinement():
    sc = get_scenario("boundary-cost-bm")
    c, cg = sc.coefficients(), sc.control_grid()
    pol = uniform_policy(TimeGrid(1.0, 10), cg)
    rep = check_boundary_integral_convergence(c, None, pol, [0.1, 0.05, 0.025], 3, npaths=4000)
    assert rep["x_dk"] == [0.0, 0.0, 0.0]
    assert all(h > 0 for h in rep["h_dk"])
    assert rep["h_dk"][0] < rep["h_dk"][1] < rep["h_dk"][2] < math.sqrt(2 / math.pi)
    with pytest.raises(InvalidInputError):
        check_boundary_integral_convergence(c, None, pol, [0.1, 0.05], 3)
    with pytest.raises(InvalidInputError):
        check_boundary_integral_convergence(c, None, pol, [0.1, 0.03, 0.01], 3)


def test_continuity_probe_zero_shift_reproduces_base():
    sc = get_scenario("toy-coupled")
    c, cg = sc.coefficients(), sc.control_grid()
    grid = TimeGrid(1.0, 20)
    pol = uniform_policy(grid, cg)
    mu = MeasureFlow(grid, np.ones((50, 21)))
    rep = probe_continuity(c, mu, pol, [0.0, 0.01, 0.02, 0.04], 2, npaths=3000)
    assert rep["rows"][0]["delta"] == 0.0
    assert rep["passed"]
    # cost grows with the shift of the flow mean for this quadratic running cost
    assert [r["cost"] for r in rep["rows"]] == sorted(r["cost"] for r in rep["rows"])
