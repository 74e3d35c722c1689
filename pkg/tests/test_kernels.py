import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rmfg import _backend
from rmfg._kernels_py import bellman_expectation as bellman_py, normals as normals_py


def _both():
    try:
        return _backend.load("python"), _backend.load("cython")
    except ImportError:
        pytest.skip("compiled extension not built")


def test_normal_stream_is_standard(backend):
    z = backend.normals(123, np.arange(200_000), 5)
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1) < 0.015
    assert abs(np.mean(z**3)) < 0.03
    assert abs(np.mean(z**4) - 3) < 0.08
    # steps and seeds give different, uncorrelated streams
    w = backend.normals(123, np.arange(200_000), 6)
    v = backend.normals(124, np.arange(200_000), 5)
    assert abs(np.corrcoef(z, w)[0, 1]) < 0.01
    assert abs(np.corrcoef(z, v)[0, 1]) < 0.01


def test_stream_depends_only_on_path_id(backend):
    ids = np.arange(1000)
    full = backend.normals(9, ids, 3)
    perm = np.random.default_rng(0).permutation(1000)
    np.testing.assert_array_equal(backend.normals(9, ids[perm], 3), full[perm])
    np.testing.assert_array_equal(backend.normals(9, ids[500:], 3), full[500:])


def test_refined_normal_is_normalized_sum(backend):
    ids = np.arange(50)
    fine = [backend.normals(4, ids, 2 * 4 + j) for j in range(4)]
    np.testing.assert_allclose(backend.normals(4, ids, 2, 4), sum(fine) / 2.0, rtol=1e-14, atol=1e-14)


def test_backends_agree():
    py, cy = _both()
    ids = np.arange(3000, dtype=np.int64) * 7 + 11
    for refine in (1, 3):
        np.testing.assert_allclose(cy.normals(77, ids, 12, refine), py.normals(77, ids, 12, refine), rtol=1e-13, atol=1e-13)
    rng = np.random.default_rng(0)
    x = np.abs(rng.normal(size=3000))
    drift, var = rng.normal(size=3000), rng.uniform(0, 2, 3000)
    a = py.euler_reflect(x, drift, var, 0.01, 5, ids, 3, 2)
    b = cy.euler_reflect(x, drift, var, 0.01, 5, ids, 3, 2)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-15)
    v_next = rng.normal(size=17)
    mean, scale = rng.normal(1, 2, (17, 3)), rng.uniform(0, 1, (17, 3))
    nodes, w = np.polynomial.hermite_e.hermegauss(5)
    w = w / w.sum()
    for u, v in zip(py.bellman_expectation(v_next, 3.0, mean, scale, nodes, w, 0.7),
                    cy.bellman_expectation(v_next, 3.0, mean, scale, nodes, w, 0.7)):
        np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-13)


@given(st.floats(-5, 5), st.floats(0, 3), st.floats(1e-4, 0.1))
@settings(max_examples=100, deadline=None)
def test_euler_step_is_projection(x_shift, var, dt):
    py = _backend.load("python")
    x = np.linspace(0, 2, 40)
    drift = np.full(40, x_shift)
    xn, dk = py.euler_reflect(x, drift, np.full(40, var), dt, 0, np.arange(40), 0)
    z = x + drift * dt + np.sqrt(var * dt) * normals_py(0, np.arange(40), 0)
    assert np.all(xn >= 0) and np.all(dk >= 0)
    assert np.all(xn * dk == 0)
    np.testing.assert_allclose(xn - dk, z, atol=1e-15)


def test_bellman_expectation_oracle():
    # linear continuation value is interpolated exactly; the deficit is paid at rate h
    v = 2.0 * np.linspace(0, 4, 9) + 1.0
    nodes, w = np.array([-1.0, 0.0, 1.0]), np.array([0.25, 0.5, 0.25])
    mean, scale = np.array([[0.5]]), np.array([[1.0]])
    acc, cl = bellman_py(v, 4.0, mean, scale, nodes, w, 3.0)
    # z = -0.5, 0.5, 1.5
    expect = 0.25 * (1.0 + 3.0 * 0.5) + 0.5 * 2.0 + 0.25 * 4.0
    assert acc[0, 0] == pytest.approx(expect, abs=1e-14)
    assert cl[0, 0] == 0
    acc, cl = bellman_py(v, 4.0, np.array([[3.9]]), np.array([[1.0]]), nodes, w, 3.0)
    assert cl[0, 0] == pytest.approx(0.25 + 0.0)  # only z = 4.9 leaves the grid
    assert acc[0, 0] == pytest.approx(0.25 * 6.8 + 0.5 * 8.8 + 0.25 * 9.0)


SNIPPET = """
import numpy as np
from rmfg._backend import BACKEND
from rmfg.scenarios import get_scenario
from rmfg.dynamics import RelaxedPolicy, StateGrid, simulate_reflected
sc = get_scenario("toy-coupled")
c, cg = sc.coefficients(), sc.control_grid()
pol = RelaxedPolicy.uniform(sc.grid(10), StateGrid(4.0, 9), cg)
pb = simulate_reflected(c, None, pol, 300, 5)
print(BACKEND, repr(float(pb.X.sum())), repr(float(pb.K.sum())))
"""


def test_fallback_selected_by_environment_gives_same_paths():
    import os
    import subprocess
    import sys

    env = dict(os.environ, RMFG_PURE_PYTHON="1")
    pure = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True).stdout.split()
    env["RMFG_PURE_PYTHON"] = "0"
    default = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True).stdout.split()
    assert pure[0] == "python"
    assert float(pure[1]) == pytest.approx(float(default[1]), rel=1e-12)
    assert float(pure[2]) == pytest.approx(float(default[2]), rel=1e-12)
