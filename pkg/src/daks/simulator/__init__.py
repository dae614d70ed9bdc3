"""Synchronous round simulation of the protocol on n processors."""

from __future__ import annotations

from typing import Optional

from daks.adversary import CrashSchedule, ErrorProfile
from daks.simulator.fast import InvariantViolation, Simulation
from daks.simulator.outcome import RunOutcome, trace_equal
from daks.simulator.reference import ReferenceSimulation
from daks.simulator.setup import (
    ChunkMap,
    ConfigError,
    ExperimentConfig,
    RunSetup,
    build_chunk_map,
    prepare,
)

ENGINES = {"fast": Simulation, "reference": ReferenceSimulation}


def run(
    config: ExperimentConfig,
    *,
    engine: str = "fast",
    schedule: Optional[CrashSchedule] = None,
    profile: Optional[ErrorProfile] = None,
    check_invariants: bool = False,
) -> RunOutcome:
    """Execute one run to completion or to the round cap."""
    setup = prepare(config, schedule, profile)
    if engine == "fast":
        return Simulation(config, setup, check_invariants=check_invariants).run()
    return ENGINES[engine](config, setup).run()


__all__ = [
    "ChunkMap",
    "ConfigError",
    "ExperimentConfig",
    "InvariantViolation",
    "ReferenceSimulation",
    "RunOutcome",
    "RunSetup",
    "Simulation",
    "build_chunk_map",
    "prepare",
    "run",
    "trace_equal",
]
