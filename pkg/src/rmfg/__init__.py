"""Mean field games with state dynamics reflected at zero.

Simulation of reflected controlled dynamics, dynamic programming for the
representative agent, damped fixed-point iteration on measure flows, and
numerical checks of the defining identities.
"""
from ._backend import BACKEND
from .errors import InvalidInputError, NumericError
from .measures import EmpiricalMeasure, MeasureFlow, TimeGrid, flow_distance, moment, w2_distance
from .dynamics import (
    CoefficientSet,
    ControlGrid,
    PathBundle,
    RelaxedPolicy,
    StateGrid,
    simulate_reflected,
    skorokhod_map,
    truncate_coefficients,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "InvalidInputError",
    "NumericError",
    "EmpiricalMeasure",
    "MeasureFlow",
    "TimeGrid",
    "flow_distance",
    "moment",
    "w2_distance",
    "CoefficientSet",
    "ControlGrid",
    "PathBundle",
    "RelaxedPolicy",
    "StateGrid",
    "simulate_reflected",
    "skorokhod_map",
    "truncate_coefficients",
]
