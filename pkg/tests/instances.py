"""Random small control problems shared by the agent and acceptance tests."""
import numpy as np

from rmfg.dynamics import CoefficientSet, ControlGrid, StateGrid
from rmfg.measures import MeasureFlow, TimeGrid


def random_instance(rng, steps=None, m=None, U=None):
    K = int(rng.integers(1, 4)) if steps is None else steps
    m = int(rng.integers(2, 6)) if m is None else m
    U = int(rng.integers(1, 4)) if U is None else U
    a = rng.normal(size=6)
    s0, s1 = rng.uniform(0.2, 1.5), rng.uniform(-0.3, 0.3)
    c0, c1, c2 = rng.uniform(0, 2, 3)
    hval = float(rng.uniform(0, 2))

    def b(t, x, mu, u):
        return a[0] + a[1] * x + a[2] * mu.mean() + a[3] * u + a[4] * t

    def sigma(t, x, mu, u):
        return s0 + s1 * np.tanh(x - u)

    def f(t, x, mu, u):
        return c0 * (x - mu.mean()) ** 2 + c1 * u * u + c2 * np.sin(x + u)

    def g(x, mu):
        return (x - a[5]) ** 2

    c = CoefficientSet(b, sigma, f, g, lambda t: hval, C1=10.0, C2=10.0, C3=10.0, C4=10.0,
                       x0=float(rng.uniform(0, 2)))
    grid = TimeGrid(float(rng.uniform(0.3, 1.5)), K)
    flow = MeasureFlow(grid, np.abs(rng.normal(1, 1, size=(7, K + 1))))
    cg = ControlGrid(np.sort(rng.choice(np.linspace(-1.5, 1.5, 13), size=U, replace=False)))
    sg = StateGrid(float(rng.uniform(2.0, 4.0)), m)
    return c, flow, sg, cg, grid
