"""Per-processor protocol logic: pure state transitions for one processor.

Every function here takes a state and returns a new one; nothing is mutated.
The simulator composes these stages into rounds, and the fast engine in
:mod:`daks.engine` reproduces the same transitions on packed bitsets.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np


class Phase(str, enum.Enum):
    WORKER = "worker"
    ENLIGHTENED = "enlightened"
    HALTED = "halted"


class MessageKind(str, enum.Enum):
    SHARE = "share"
    PROFESS = "profess"


@dataclass(frozen=True, order=True)
class ResultTriple:
    """One execution of a task: the value produced, who produced it, and when."""

    value: int
    executor: int
    round: int


# Knowledge is a tuple of frozensets, one per (chunk-)task; index 0 is task 1.
Knowledge = tuple


def empty_knowledge(n: int) -> Knowledge:
    return tuple(frozenset() for _ in range(n))


def log2_ceil(n: int) -> int:
    """ceil(log2 n), floored at 1 so that n = 1 and n = 2 still fan out."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return max(1, (n - 1).bit_length())


@dataclass(frozen=True)
class Thresholds:
    n: int
    H: float = 2.0
    K: float = 8.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (self.H > 0 and self.K > 0):
            raise ValueError(f"H and K must be positive, got H={self.H}, K={self.K}")

    @property
    def results_needed(self) -> int:
        return max(1, math.ceil(self.K * math.log2(self.n)))

    @property
    def profess_needed(self) -> int:
        return max(1, math.ceil(self.H * math.log2(self.n)))

    @property
    def fanout_unit(self) -> int:
        return log2_ceil(self.n)


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: int
    payload: Knowledge = field(repr=False)


@dataclass(frozen=True)
class ProcessorState:
    me: int
    phase: Phase
    knowledge: Knowledge = field(repr=False)
    results: tuple
    prof_ctr: int = 0
    ell: int = 0
    round: int = 0

    @classmethod
    def initial(cls, me: int, n: int) -> "ProcessorState":
        return cls(me=me, phase=Phase.WORKER, knowledge=empty_knowledge(n), results=(None,) * n)

    @property
    def n(self) -> int:
        return len(self.knowledge)


def plurality(triples: Iterable[ResultTriple]) -> int:
    """Most frequent value among the triples; ties go to the smaller value."""
    counts = Counter(tr.value for tr in set(triples))
    if not counts:
        raise ValueError("no results for task")
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def enlightenment_ready(knowledge: Knowledge, th: Thresholds) -> bool:
    return min(len(s) for s in knowledge) >= th.results_needed


def choose_share_target(rng: np.random.Generator, n: int) -> int:
    return int(rng.integers(1, n + 1))


def profess_draw_count(n: int, ell: int) -> int:
    unit = log2_ceil(n)
    # 2**ell * unit, capped at n * unit; the cap kicks in once 2**ell >= n
    if ell >= n.bit_length():
        return n * unit
    return min(unit << ell, n * unit)


def choose_profess_targets(rng: np.random.Generator, n: int, ell: int) -> tuple[tuple[int, ...], int]:
    """Draw targets with replacement; return (distinct targets, number of draws)."""
    if ell < 0:
        raise ValueError(f"ell must be >= 0, got {ell}")
    draws = profess_draw_count(n, ell)
    picked = rng.integers(1, n + 1, size=draws)
    return tuple(int(q) for q in np.unique(picked)), draws


def receive_phase(state: ProcessorState, inbox: Sequence[Message]) -> ProcessorState:
    if state.phase is Phase.HALTED:
        raise ValueError(f"processor {state.me} is halted and cannot receive")
    if not inbox:
        return state
    professed = sum(1 for m in inbox if m.kind is MessageKind.PROFESS)
    knowledge = tuple(
        own.union(*(m.payload[j] for m in inbox)) for j, own in enumerate(state.knowledge)
    )
    return replace(state, knowledge=knowledge, prof_ctr=state.prof_ctr + professed)


def execute_task(rng: np.random.Generator, n: int, truth: Sequence[int], p_err: float) -> tuple[int, int]:
    """Pick a task uniformly and execute it; returns (task id, produced value).

    A faulty execution returns the complement of the correct bit. The error
    coin is always drawn so the random stream does not depend on ``p_err``.
    """
    j = int(rng.integers(1, n + 1))
    faulty = rng.random() < p_err
    return j, int(truth[j - 1]) ^ int(faulty)


def compute_phase(
    state: ProcessorState,
    rng: np.random.Generator,
    truth: Sequence[int],
    p_err: float,
    th: Thresholds,
    chunk_size: int = 1,
) -> tuple[ProcessorState, int]:
    if state.phase is Phase.HALTED:
        raise ValueError(f"processor {state.me} is halted and cannot compute")
    r = state.round + 1
    if state.phase is Phase.ENLIGHTENED:
        return replace(state, round=r), 1

    j, value = execute_task(rng, state.n, truth, p_err)
    knowledge = list(state.knowledge)
    knowledge[j - 1] = knowledge[j - 1] | {ResultTriple(value, state.me, r)}
    knowledge = tuple(knowledge)
    new = replace(state, knowledge=knowledge, round=r)
    if enlightenment_ready(knowledge, th):
        new = replace(
            new,
            phase=Phase.ENLIGHTENED,
            results=tuple(plurality(s) for s in knowledge),
        )
    return new, chunk_size


def send_phase(
    state: ProcessorState, rng: np.random.Generator, n: int
) -> tuple[list[tuple[int, Message]], ProcessorState, int]:
    """Returns (outgoing (target, message) pairs, new state, profess draws)."""
    if state.phase is Phase.HALTED:
        raise ValueError(f"processor {state.me} is halted and cannot send")
    if state.phase is Phase.WORKER:
        q = choose_share_target(rng, n)
        return [(q, Message(MessageKind.SHARE, state.me, state.knowledge))], state, 0
    targets, draws = choose_profess_targets(rng, n, state.ell)
    msg = Message(MessageKind.PROFESS, state.me, state.knowledge)
    return [(q, msg) for q in targets], replace(state, ell=state.ell + 1), draws


def halt_check(state: ProcessorState, th: Thresholds) -> bool:
    return state.prof_ctr >= th.profess_needed


def halt(state: ProcessorState) -> ProcessorState:
    if state.phase is not Phase.ENLIGHTENED:
        raise ValueError(f"processor {state.me} would halt without being enlightened")
    return replace(state, phase=Phase.HALTED)
