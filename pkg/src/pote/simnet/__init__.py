"""Deterministic discrete-event simulation of a validator network."""

from pote.simnet.adversary import apply_adversary
from pote.simnet.config import (
    AdversarySpec,
    ConfigInvalid,
    DelayModel,
    Partition,
    Scenario,
    load_scenario,
    parse_scenario,
)
from pote.simnet.engine import Event, LivenessStall, SimClock, SimResult, Simulation, run_scenario
from pote.simnet.records import RoundRecord

__all__ = [
    "AdversarySpec",
    "ConfigInvalid",
    "DelayModel",
    "Event",
    "LivenessStall",
    "Partition",
    "RoundRecord",
    "Scenario",
    "SimClock",
    "SimResult",
    "Simulation",
    "apply_adversary",
    "load_scenario",
    "parse_scenario",
    "run_scenario",
]
