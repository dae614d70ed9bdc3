"""Oblivious adversary inputs: error profiles, crash schedules, ground truth.

Everything here is fixed before round 1 and depends only on the seed and the
adversary parameters, never on the execution.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from daks.protocol import log2_ceil

SCHEMA_VERSION = 1

# Independent random streams derived from one run seed.
STREAM_TRUTH = 1
STREAM_PROFILE = 2
STREAM_SCHEDULE = 3
STREAM_PROCESSORS = 4


def stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


class AdversaryError(ValueError):
    """Adversary input that cannot be generated or fails validation."""


@dataclass(frozen=True)
class CrashModel:
    """Survivor floor: ``none``, ``mfp`` (a*n**epsilon) or ``mpl`` (a*log2(n)**c)."""

    name: str = "none"
    epsilon: float = 0.5
    c: float = 1.0
    coeff: float = 1.0

    def __post_init__(self):
        if self.name not in ("none", "mfp", "mpl"):
            raise AdversaryError(f"unknown crash model {self.name!r}")
        if self.name == "mfp" and not 0 < self.epsilon < 1:
            raise AdversaryError(f"mfp needs epsilon in (0, 1), got {self.epsilon}")
        if self.name == "mpl" and self.c < 1:
            raise AdversaryError(f"mpl needs c >= 1, got {self.c}")
        if self.coeff <= 0:
            raise AdversaryError(f"floor coefficient must be positive, got {self.coeff}")

    def survivor_floor(self, n: int) -> int:
        if self.name == "none":
            return n
        if self.name == "mfp":
            bound = self.coeff * n**self.epsilon
        else:
            bound = self.coeff * math.log2(n) ** self.c if n > 1 else 1.0
        # guard against 256**0.5 landing a hair above 16
        return min(n, max(1, math.ceil(round(bound, 9))))

    def to_dict(self) -> dict:
        return {"name": self.name, "epsilon": self.epsilon, "c": self.c, "coeff": self.coeff}


@dataclass(frozen=True)
class ErrorProfile:
    p: np.ndarray
    zeta: float = 0.05

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise AdversaryError("error profile must be a non-empty vector")
        if np.any(p < 0) or np.any(p >= 1):
            raise AdversaryError("every error probability must lie in [0, 1)")
        if self.zeta <= 0:
            raise AdversaryError(f"zeta must be positive, got {self.zeta}")
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.p.size

    @property
    def bound(self) -> float:
        return 0.5 - self.zeta

    def mean(self) -> float:
        return float(self.p.mean())


@dataclass(frozen=True)
class CrashSchedule:
    """crash_round[i] is the round at whose start processor i+1 crashes, or None."""

    crash_round: tuple
    model: CrashModel = field(default_factory=CrashModel)

    @property
    def n(self) -> int:
        return len(self.crash_round)

    @classmethod
    def benign(cls, n: int, model: Optional[CrashModel] = None) -> "CrashSchedule":
        return cls((None,) * n, model or CrashModel())

    def crashed_by(self, r: int) -> np.ndarray:
        """Mask of processors crashed at or before the start of round r."""
        return np.array([c is not None and c <= r for c in self.crash_round], dtype=bool)

    def crash_rounds(self) -> list[int]:
        return sorted({c for c in self.crash_round if c is not None})

    def survivors(self) -> int:
        return sum(c is None for c in self.crash_round)


@dataclass(frozen=True)
class Violation:
    round: int
    kind: str
    detail: str


def gen_error_profile(
    rng: np.random.Generator,
    n: int,
    target_avg: float,
    zeta: float = 0.05,
    mode: str = "heterogeneous",
) -> ErrorProfile:
    """Draw per-processor error probabilities whose mean is ``target_avg``.

    ``constant`` gives every processor the target; ``spread`` draws around it;
    ``heterogeneous`` makes roughly 15% of processors nearly always wrong and
    compensates with low probabilities elsewhere.
    """
    if not 0 <= target_avg < 1:
        raise AdversaryError(f"target average must be in [0, 1), got {target_avg}")
    if target_avg + zeta >= 0.5:
        raise AdversaryError(
            f"average error probability {target_avg} violates the constraint "
            f"mean(p) < 1/2 - zeta = {0.5 - zeta:g}"
        )
    if target_avg == 0 or mode == "constant":
        return ErrorProfile(np.full(n, float(target_avg)), zeta)

    if mode == "spread":
        p = _rescale(rng.uniform(0, 1, n), target_avg)
        return ErrorProfile(p, zeta)
    if mode != "heterogeneous":
        raise AdversaryError(f"unknown profile mode {mode!r}")

    n_bad = int(round(0.15 * n))
    high = rng.uniform(0.8, 0.99, n_bad)
    # keep the honest majority's mean at >= target/2 by dropping bad processors
    while n_bad and (n * target_avg - high.sum()) / (n - n_bad) < target_avg / 2:
        n_bad -= 1
        high = high[:n_bad]
    rest_mean = (n * target_avg - high.sum()) / (n - n_bad)
    low = _rescale(rng.uniform(0, 1, n - n_bad), rest_mean)
    p = np.concatenate([high, low])
    p = p[rng.permutation(n)]
    return ErrorProfile(p, zeta)


def _rescale(u: np.ndarray, mean: float) -> np.ndarray:
    # scale into [0, 2*mean] and hit the mean exactly
    if u.size == 0:
        return u
    v = u / u.mean() * mean
    if v.max() >= 1:
        v = np.full_like(u, mean)
    return v


def gen_crash_schedule(
    rng: np.random.Generator,
    n: int,
    model: CrashModel,
    aggressiveness: str = "none",
    *,
    cliff_round: int = 10,
    horizon: int = 100,
    profile: Optional[ErrorProfile] = None,
    max_attempts: int = 1000,
) -> CrashSchedule:
    """Oblivious schedule crashing down to exactly the model's survivor floor.

    ``cliff`` crashes all victims at ``cliff_round``; ``attrition`` spreads the
    crashes uniformly over rounds 1..horizon. When a profile is given, victim
    sets are redrawn until every crash prefix keeps the survivors' mean error
    probability under the profile's bound.
    """
    if aggressiveness == "none" or model.name == "none":
        return CrashSchedule.benign(n, model)
    if aggressiveness not in ("cliff", "attrition"):
        raise AdversaryError(f"unknown aggressiveness {aggressiveness!r}")
    if cliff_round < 1 or horizon < 1:
        raise AdversaryError("crash rounds start at 1")

    n_victims = n - model.survivor_floor(n)
    for _ in range(max_attempts):
        victims = rng.choice(n, size=n_victims, replace=False)
        if aggressiveness == "cliff":
            rounds = np.full(n_victims, cliff_round)
        else:
            rounds = rng.integers(1, horizon + 1, size=n_victims)
        crash = [None] * n
        for v, r in zip(victims, rounds):
            crash[int(v)] = int(r)
        schedule = CrashSchedule(tuple(crash), model)
        if profile is None or not validate_schedule(schedule, profile):
            return schedule
    raise AdversaryError(
        f"no valid {aggressiveness} schedule found in {max_attempts} attempts; "
        "the survivors' mean error probability keeps exceeding 1/2 - zeta"
    )


def validate_schedule(schedule: CrashSchedule, profile: ErrorProfile) -> list[Violation]:
    """All violations of the survivor floor and the prefix-wise average constraint."""
    out = []
    n = schedule.n
    if profile.n != n:
        return [Violation(0, "size", f"schedule has {n} processors, profile {profile.n}")]
    floor = schedule.model.survivor_floor(n)
    if schedule.survivors() < floor:
        out.append(
            Violation(
                max(schedule.crash_rounds(), default=0),
                "floor",
                f"{schedule.survivors()} survivors < floor {floor} ({schedule.model.name})",
            )
        )
    for r in [0, *schedule.crash_rounds()]:
        alive = ~schedule.crashed_by(r) if r else np.ones(n, dtype=bool)
        if not alive.any():
            out.append(Violation(r, "extinct", "no live processors"))
            continue
        avg = float(profile.p[alive].mean())
        if avg >= profile.bound:
            out.append(
                Violation(r, "average", f"mean error probability {avg:.4f} >= 1/2 - zeta = {profile.bound:g}")
            )
    return out


def gen_ground_truth(seed: int, t: int) -> np.ndarray:
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    return stream(seed, STREAM_TRUTH).integers(0, 2, size=t, dtype=np.int8)


def dump_adversary(path, schedule: CrashSchedule, profile: ErrorProfile, seed: Optional[int] = None) -> None:
    doc = {
        "version": SCHEMA_VERSION,
        "n": schedule.n,
        "model": schedule.model.name,
        "params": schedule.model.to_dict(),
        "crash_round": list(schedule.crash_round),
        "p": [float(x) for x in profile.p],
        "zeta": profile.zeta,
        "seed": seed,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_adversary(path) -> tuple[CrashSchedule, ErrorProfile, Optional[int]]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != SCHEMA_VERSION:
        raise AdversaryError(f"unsupported adversary document version {doc.get('version')!r}")
    params = dict(doc["params"])
    params["name"] = doc["model"]
    model = CrashModel(**params)
    crash = tuple(None if c is None else int(c) for c in doc["crash_round"])
    if len(crash) != doc["n"] or len(doc["p"]) != doc["n"]:
        raise AdversaryError("crash_round and p must both have length n")
    return CrashSchedule(crash, model), ErrorProfile(np.array(doc["p"]), doc["zeta"]), doc.get("seed")
