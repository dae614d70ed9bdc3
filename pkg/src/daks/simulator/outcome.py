from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from daks.metrics import RoundTrace, RunMetrics
from daks.simulator.setup import ChunkMap, ExperimentConfig

PHASE_NAMES = ("worker", "enlightened", "halted")


@dataclass
class RunOutcome:
    """Final state of every processor plus the run's trace and metrics.

    Per-processor arrays are indexed by id - 1. ``results`` holds chunk-level
    bits (-1 where unset); ``task_results`` expands them to the t tasks.
    """

    config: ExperimentConfig
    chunk_map: ChunkMap
    truth: np.ndarray
    chunk_truth: np.ndarray
    phase: np.ndarray
    results: np.ndarray
    prof_ctr: np.ndarray
    ell: np.ndarray
    enlightened_round: np.ndarray
    halt_round: np.ndarray
    profess_draws: np.ndarray
    profess_received: np.ndarray
    crashed: frozenset
    halted: frozenset
    metrics: RunMetrics
    truncated: bool
    traces: list = field(default_factory=list, repr=False)

    def task_results(self, proc: int) -> np.ndarray:
        res = self.results[proc - 1]
        if np.any(res < 0):
            raise ValueError(f"processor {proc} has no results")
        flip = np.repeat(res ^ self.chunk_truth, self.chunk_map.lengths())
        return self.truth ^ flip

    def _nonempty(self) -> np.ndarray:
        return self.chunk_map.lengths() > 0

    def correct(self, proc: int) -> bool:
        res = self.results[proc - 1]
        keep = self._nonempty()
        return bool(np.all(res[keep] == self.chunk_truth[keep]))

    @property
    def all_correct(self) -> bool:
        return bool(self.halted) and all(self.correct(i) for i in self.halted)

    @property
    def agreement(self) -> bool:
        keep = self._nonempty()
        rows = {self.results[i - 1][keep].tobytes() for i in self.halted}
        return len(rows) <= 1

    def disagreements(self) -> list:
        """Halted processors whose results differ from the lowest-id halted one."""
        if not self.halted:
            return []
        ids = sorted(self.halted)
        keep = self._nonempty()
        ref = self.results[ids[0] - 1][keep]
        return [i for i in ids[1:] if not np.array_equal(self.results[i - 1][keep], ref)]

    def phase_name(self, proc: int) -> str:
        return PHASE_NAMES[self.phase[proc - 1]]

    def summary(self) -> dict:
        m = self.metrics
        return {
            "config": self.config.to_dict(),
            "rounds": m.rounds,
            "time_units": m.time_units,
            "work": m.work,
            "msgs_share": m.msgs_share,
            "msgs_profess": m.msgs_profess,
            "profess_draws": m.profess_draws,
            "first_enlightened_round": m.first_enlightened_round,
            "last_halt_round": m.last_halt_round,
            "survivor_count": m.survivor_count,
            "truncated": self.truncated,
            "all_correct": self.all_correct,
            "agreement": self.agreement,
            "halted": sorted(self.halted),
            "crashed": sorted(self.crashed),
        }


def trace_equal(a: list[RoundTrace], b: list[RoundTrace]) -> bool:
    return [x.to_dict() for x in a] == [x.to_dict() for x in b]
