import numpy as np
import pytest

from rmfg.dynamics import RelaxedPolicy, StateGrid, simulate_reflected
from rmfg.errors import InvalidInputError
from rmfg.measures import TimeGrid
from rmfg.nplayer import GameConfig, _Batch, _SelfInclusiveFlow, estimate_deviation_gain, simulate_nplayer
from rmfg.scenarios import get_scenario

from conftest import uniform_policy


def _toy(steps=10):
    sc = get_scenario("toy-coupled")
    grid = TimeGrid(1.0, steps)
    return sc.coefficients(), RelaxedPolicy.uniform(grid, StateGrid(5.0, 51), sc.control_grid())


def test_config_validation():
    with pytest.raises(InvalidInputError):
        GameConfig(0)
    with pytest.raises(InvalidInputError):
        GameConfig(4, npaths=1)
    assert GameConfig(4, seed=1).seed_for("x") != GameConfig(8, seed=1).seed_for("x")


def test_batch_measure_statistics():
    x = np.array([[3.0, 1.0, 2.0], [0.0, 0.0, 6.0]])
    b = _Batch(x)
    np.testing.assert_allclose(b.mean(), [[2.0], [2.0]])
    np.testing.assert_allclose(b.moment(2), [[14 / 3], [12.0]])
    np.testing.assert_allclose(b.moment(0), 1.0)


def test_uncoupled_game_matches_single_agent_paths():
    sc = get_scenario("reflected-bm")
    c, cg = sc.coefficients(), sc.control_grid()
    grid = TimeGrid(1.0, 20)
    pol = uniform_policy(grid, cg)
    gc = GameConfig(4, npaths=25, seed=3)
    game = simulate_nplayer(c, pol, gc, seed=99)
    ref = simulate_reflected(c, None, pol, 100, 99)
    np.testing.assert_array_equal(game.X.reshape(100, -1), ref.X)


def test_player_relabelling_permutes_outcomes():
    c, pol = _toy()
    gc = GameConfig(5, npaths=20, seed=1)
    perm = np.array([3, 0, 4, 1, 2])
    a = simulate_nplayer(c, pol, gc)
    b = simulate_nplayer(c, pol, gc, player_ids=perm)
    # player i of b draws the noise of player perm[i] of a
    np.testing.assert_allclose(b.costs, a.costs[:, perm], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(b.X, a.X[:, perm], atol=1e-12)
    with pytest.raises(InvalidInputError):
        simulate_nplayer(c, pol, gc, player_ids=[0, 0, 1, 2, 3])


def test_deviation_to_own_policy_has_zero_gain():
    c, pol = _toy()
    gc = GameConfig(4, npaths=30, seed=2)
    base = simulate_nplayer(c, pol, gc).costs
    same = simulate_nplayer(c, pol, gc, deviation=pol).costs
    np.testing.assert_array_equal(base, same)


def test_self_inclusive_environment():
    grid = TimeGrid(1.0, 2)
    from rmfg.measures import MeasureFlow

    others = MeasureFlow(grid, np.tile([1.0, 2.0, 3.0], (6, 1)))
    x = np.array([0.0, 4.0])
    env = _SelfInclusiveFlow(grid, others, 4, x)
    np.testing.assert_allclose(env.marginal(1).mean(), [(0 + 3 * 2) / 4, (4 + 3 * 2) / 4])
    np.testing.assert_allclose(env.marginal(2).moment(2), [(0 + 3 * 9) / 4, (16 + 3 * 9) / 4])


def test_uniform_profile_is_far_from_nash():
    c, pol = _toy()
    rep = estimate_deviation_gain(c, pol, GameConfig(4, npaths=60, seed=0))
    assert rep.best["id"] in ("dp-best-response", "const[0.0]")
    assert rep.gap > 5 * rep.gap_stderr > 0
    assert len(rep.rows) == 4
    with pytest.raises(InvalidInputError):
        estimate_deviation_gain(c, pol, GameConfig(1, npaths=10))


def test_report_csv(tmp_path):
    c, pol = _toy(steps=5)
    for i, N in enumerate((2, 3)):
        estimate_deviation_gain(c, pol, GameConfig(N, npaths=10, best_response=False)).to_csv(tmp_path / "n.csv", append=i > 0)
    lines = (tmp_path / "n.csv").read_text().splitlines()
    assert lines[0].startswith("N,") and len(lines) == 1 + 3 + 3
