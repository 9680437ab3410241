from .channel import Emission, LossModel, channel_deliver
from .engine import Simulation, run_scenario
from .scenario import SCHEMA, Scenario, bundled_names, from_dict, load
from .trace import Trace, TraceEvent

ScenarioTrace = Trace

__all__ = [
    "Emission",
    "LossModel",
    "SCHEMA",
    "Scenario",
    "ScenarioTrace",
    "Simulation",
    "Trace",
    "TraceEvent",
    "bundled_names",
    "channel_deliver",
    "from_dict",
    "load",
    "run_scenario",
]
