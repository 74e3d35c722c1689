"""Built-in scenario registry.

Every scenario is closed-form code selected by name; parameters can be
overridden with plain numbers, never with code.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import CoefficientSet, ControlGrid
from .errors import InvalidInputError
from .measures import TimeGrid

__all__ = ["Scenario", "REGISTRY", "get_scenario", "scenario_names"]


def _zero(t, x, mu, u):
    return np.zeros_like(x)


def _one(t, x, mu, u):
    return np.ones_like(x)


@dataclass(frozen=True)
class Scenario:
    name: str
    summary: str
    build: Callable[..., CoefficientSet]
    controls: Callable[..., ControlGrid]
    params: dict = field(default_factory=dict)
    horizon: float = 1.0
    steps: int = 50
    state_dx: float = 0.025
    # MFG defaults (damping, tolerance, max iterations, particles)
    mfg: dict = field(default_factory=dict)

    def coefficients(self, **overrides) -> CoefficientSet:
        return self.build(**self.parameters(**overrides))

    def control_grid(self, **overrides) -> ControlGrid:
        return self.controls(**self.parameters(**overrides))

    def parameters(self, **overrides) -> dict:
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise InvalidInputError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        p = dict(self.params)
        p.update({k: float(v) for k, v in overrides.items()})
        return p

    def grid(self, steps: int | None = None) -> TimeGrid:
        return TimeGrid(self.horizon, self.steps if steps is None else steps)


def _bm(h=0.0, x0=0.0, sigma=1.0):
    def sig(t, x, mu, u):
        return np.full_like(x, sigma)

    def hfn(t):
        return h

    return CoefficientSet(
        b=_zero, sigma=sig, f=_zero, g=lambda x, mu: np.zeros_like(x), h=hfn,
        C1=1.0, C2=max(sigma, 1e-6), C3=1.0, C4=1.0, x0=x0,
        name="reflected-bm" if h == 0 else "boundary-cost-bm",
    )


def _single(**_):
    return ControlGrid([0.0])


def _u3(umax=1.0, nu=3, **_):
    return ControlGrid.uniform(-umax, umax, int(nu))


def _toy(kappa=0.2, sigma=0.5, h=0.1, x0=1.0, umax=1.0, nu=3):
    def b(t, x, mu, u):
        return u + kappa * (mu.mean() - x)

    def sig(t, x, mu, u):
        return np.full_like(x, sigma)

    def f(t, x, mu, u):
        return (x - mu.mean()) ** 2 + 0.5 * u * u

    def g(x, mu):
        return x * x

    # |b| <= umax + kappa (x + |mu|_2); running cost <= 2x^2 + 2|mu|^2 + umax^2 / 2
    return CoefficientSet(
        b=b, sigma=sig, f=f, g=g, h=lambda t: h,
        C1=max(kappa, 1e-6), C2=max(umax, 1.0) + sigma + kappa, C3=1.0, C4=max(2.0, 0.5 * umax**2),
        x0=x0, name="toy-coupled",
    )


def _unbounded(sigma=0.5, h=0.1, x0=2.0, umax=1.0, nu=3):
    def b(t, x, mu, u):
        return u - x

    def sig(t, x, mu, u):
        return np.full_like(x, sigma)

    def f(t, x, mu, u):
        return (x - mu.mean()) ** 2 + 0.5 * u * u

    def g(x, mu):
        return x * x

    return CoefficientSet(
        b=b, sigma=sig, f=f, g=g, h=lambda t: h,
        C1=1.0, C2=max(umax, 1.0) + sigma, C3=1.0, C4=max(2.0, 0.5 * umax**2),
        x0=x0, name="unbounded-drift",
    )


_FP = {"damping": 0.5, "tol": 0.05, "max_iter": 30, "npaths": 20000}

REGISTRY: dict[str, Scenario] = {
    s.name: s
    for s in (
        Scenario("reflected-bm", "Brownian motion reflected at 0, no costs",
                 lambda **p: _bm(h=0.0, **p), _single, {"x0": 0.0, "sigma": 1.0}, steps=100,
                 mfg=dict(_FP, max_iter=3)),
        Scenario("boundary-cost-bm", "reflected Brownian motion with unit boundary cost rate",
                 lambda **p: _bm(**p), _single, {"h": 1.0, "x0": 0.0, "sigma": 1.0}, steps=100,
                 mfg=dict(_FP, max_iter=3)),
        Scenario("toy-coupled", "mean-reverting toward the population mean, quadratic costs",
                 _toy, _u3, {"kappa": 0.2, "sigma": 0.5, "h": 0.1, "x0": 1.0, "umax": 1.0, "nu": 3},
                 mfg=_FP),
        Scenario("unbounded-drift", "linear drift u - x, exercises coefficient truncation",
                 _unbounded, _u3, {"sigma": 0.5, "h": 0.1, "x0": 2.0, "umax": 1.0, "nu": 3},
                 mfg=dict(_FP, npaths=10000)),
    )
}


def scenario_names() -> list[str]:
    return list(REGISTRY)


def get_scenario(name: str) -> Scenario:
    try:
        return REGISTRY[name]
    except KeyError:
        raise InvalidInputError(f"unknown scenario {name!r}; known: {', '.join(REGISTRY)}") from None
