"""Run configuration, task chunking, and the adversary inputs for one run."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from daks.adversary import (
    STREAM_PROCESSORS,
    STREAM_PROFILE,
    STREAM_SCHEDULE,
    AdversaryError,
    CrashModel,
    CrashSchedule,
    ErrorProfile,
    gen_crash_schedule,
    gen_error_profile,
    gen_ground_truth,
    stream,
    validate_schedule,
)
from daks.protocol import Thresholds


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    t: Optional[int] = None
    H: float = 2.0
    K: float = 8.0
    model: str = "none"
    epsilon: float = 0.5
    c: float = 1.0
    floor_coeff: float = 1.0
    aggressiveness: str = "none"
    cliff_round: int = 10
    horizon: int = 100
    target_p: float = 0.0
    zeta: float = 0.05
    profile_mode: str = "heterogeneous"
    seed: int = 0
    max_rounds: Optional[int] = None

    def __post_init__(self):
        if self.t is None:
            object.__setattr__(self, "t", self.n)
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError(f"n: must be a positive integer, got {self.n!r}")
        if not isinstance(self.t, int) or self.t < self.n:
            raise ConfigError(f"t: must be an integer >= n = {self.n}, got {self.t!r}")
        if self.max_rounds is not None and self.max_rounds <= 0:
            raise ConfigError(f"max_rounds: must be positive, got {self.max_rounds}")
        if self.H <= 0 or self.K <= 0:
            raise ConfigError(f"H, K: must be positive, got H={self.H}, K={self.K}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown config field")
        if "n" not in data:
            raise ConfigError("n: missing required field")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def crash_model(self) -> CrashModel:
        return CrashModel(self.model, epsilon=self.epsilon, c=self.c, coeff=self.floor_coeff)

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.n, H=self.H, K=self.K)

    @property
    def round_cap(self) -> int:
        if self.max_rounds is not None:
            return self.max_rounds
        return 64 * self.n * build_chunk_map(self.t, self.n).chunk_size


@dataclass(frozen=True)
class ChunkMap:
    t: int
    n: int
    chunk_size: int

    def tasks(self, chunk: int) -> range:
        """Original (1-based) task ids covered by chunk-task ``chunk``."""
        lo = (chunk - 1) * self.chunk_size + 1
        return range(min(lo, self.t + 1), min(lo + self.chunk_size, self.t + 1))

    def chunk_of(self, task: int) -> int:
        return (task - 1) // self.chunk_size + 1

    def lengths(self) -> np.ndarray:
        return np.array([len(self.tasks(j)) for j in range(1, self.n + 1)])


def build_chunk_map(t: int, n: int) -> ChunkMap:
    if t < n:
        raise ConfigError(f"t: must be >= n, got t={t}, n={n}")
    return ChunkMap(t, n, math.ceil(t / n))


def chunk_truth(truth: np.ndarray, cmap: ChunkMap) -> np.ndarray:
    """Bit identifying each chunk's correct outcome: its first task's bit.

    Faulty executions complement a whole chunk, so a chunk outcome is either
    the true vector or its complement and one bit tells them apart. Chunks
    left empty by the ceiling partition get a fixed 0.
    """
    out = np.zeros(cmap.n, dtype=np.int8)
    for j in range(1, cmap.n + 1):
        tasks = cmap.tasks(j)
        if len(tasks):
            out[j - 1] = truth[tasks[0] - 1]
    return out


def processor_streams(seed: int, n: int) -> list:
    children = np.random.SeedSequence([seed, STREAM_PROCESSORS]).spawn(n)
    return [np.random.default_rng(s) for s in children]


@dataclass
class RunSetup:
    truth: np.ndarray
    chunk_map: ChunkMap
    chunk_truth: np.ndarray
    profile: ErrorProfile
    schedule: CrashSchedule
    rngs: list


def make_adversary(config: ExperimentConfig) -> tuple[CrashSchedule, ErrorProfile]:
    profile = gen_error_profile(
        stream(config.seed, STREAM_PROFILE), config.n, config.target_p, config.zeta, config.profile_mode
    )
    schedule = gen_crash_schedule(
        stream(config.seed, STREAM_SCHEDULE),
        config.n,
        config.crash_model,
        config.aggressiveness,
        cliff_round=config.cliff_round,
        horizon=config.horizon,
        profile=profile,
    )
    return schedule, profile


def prepare(
    config: ExperimentConfig,
    schedule: Optional[CrashSchedule] = None,
    profile: Optional[ErrorProfile] = None,
) -> RunSetup:
    """Build every input of a run; refuses adversary inputs that fail validation."""
    if schedule is None or profile is None:
        gen_schedule, gen_profile = make_adversary(config)
        schedule = schedule or gen_schedule
        profile = profile or gen_profile
    violations = validate_schedule(schedule, profile)
    if violations:
        v = violations[0]
        raise AdversaryError(f"invalid adversary input at round {v.round}: {v.detail}")
    cmap = build_chunk_map(config.t, config.n)
    truth = gen_ground_truth(config.seed, config.t)
    return RunSetup(
        truth=truth,
        chunk_map=cmap,
        chunk_truth=chunk_truth(truth, cmap),
        profile=profile,
        schedule=schedule,
        rngs=processor_streams(config.seed, config.n),
    )
