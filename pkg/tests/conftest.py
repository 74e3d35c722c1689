import numpy as np
import pytest

from rmfg import _backend
from rmfg.dynamics import RelaxedPolicy, StateGrid
from rmfg.scenarios import get_scenario


@pytest.fixture(params=["python", "cython"])
def backend(request):
    try:
        return _backend.load(request.param)
    except ImportError:
        pytest.skip("compiled extension not built")


@pytest.fixture
def rbm():
    sc = get_scenario("reflected-bm")
    return sc.coefficients(), sc.control_grid()


def uniform_policy(grid, controls, xmax=10.0, m=2):
    return RelaxedPolicy.uniform(grid, StateGrid(xmax, m), controls)


@pytest.fixture(scope="session")
def toy_solution():
    from rmfg.mfg import config_for, solve_fixed_point

    sc = get_scenario("toy-coupled")
    c = sc.coefficients()
    cfg = config_for(c, sc.grid(), sc.control_grid(), seed=11, npaths=8000)
    return c, cfg, solve_fixed_point(c, cfg)


# acceptance verdicts, filled in by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
