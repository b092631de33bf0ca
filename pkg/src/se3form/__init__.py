"""Formation control of rigid bodies in SE(3) under performance funnels.

Simulator, decentralized controller, and verification tooling for
distance-and-orientation formation keeping on tree sensing graphs, with
collision/connectivity constraints enforced through funnel containment.
"""

from importlib import resources

from . import controller, funnel, graph, plant, se3, sim, verify
from .errors import (
    FormationError,
    FunnelViolation,
    ParseError,
    SchemaMismatch,
    ValidationError,
)
from .sim import (
    Scenario,
    SimState,
    Trace,
    initial_state,
    integrate_plant,
    load_scenario,
    run,
    scenario_from_dict,
    step,
    sweep,
    trace_from_csv,
    transformed,
)

__all__ = [
    "controller",
    "funnel",
    "graph",
    "plant",
    "se3",
    "sim",
    "verify",
    "FormationError",
    "FunnelViolation",
    "ParseError",
    "SchemaMismatch",
    "ValidationError",
    "Scenario",
    "SimState",
    "Trace",
    "initial_state",
    "integrate_plant",
    "load_scenario",
    "run",
    "scenario_from_dict",
    "step",
    "sweep",
    "trace_from_csv",
    "transformed",
    "builtin_scenario_path",
]

__version__ = "0.1.0"


def builtin_scenario_path(name: str):
    """Filesystem path of a bundled scenario (e.g. 'paper_sec5')."""
    return resources.files(__package__) / "scenarios" / f"{name}.json"
