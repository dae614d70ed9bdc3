"""Round traces, per-run cost accounting, and sweep summaries."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass
class RoundTrace:
    """What happened in one round. Processor ids are 1-based."""

    round: int
    chunk_size: int
    live: int  # not crashed, after this round's crashes
    workers: int  # workers that ran this round
    enlightened: int  # enlightened processors that ran this round
    crashed: list = field(default_factory=list)
    share_sent: int = 0
    profess_sent: int = 0
    profess_draws: int = 0
    delivered: int = 0
    dropped: int = 0  # addressed to crashed or halted processors
    newly_enlightened: list = field(default_factory=list)
    newly_halted: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunMetrics:
    n: int = 0
    t: int = 0
    rounds: int = 0
    time_units: int = 0
    work: int = 0
    msgs_share: int = 0
    msgs_profess: int = 0
    profess_draws: int = 0
    first_enlightened_round: Optional[int] = None
    last_halt_round: Optional[int] = None
    survivor_count: int = 0
    truncated: bool = False

    @property
    def messages(self) -> int:
        return self.msgs_share + self.msgs_profess

    def cascade_length(self) -> Optional[int]:
        if self.first_enlightened_round is None or self.last_halt_round is None:
            return None
        return self.last_halt_round - self.first_enlightened_round


def accumulate(events: Iterable[RoundTrace], n: int = 0, t: int = 0, truncated: bool = False) -> RunMetrics:
    m = RunMetrics(n=n, t=t, survivor_count=n, truncated=truncated)
    for ev in events:
        if ev.round != m.rounds + 1:
            raise ValueError(f"round {ev.round} out of order after round {m.rounds}")
        m.rounds = ev.round
        m.time_units += ev.chunk_size
        m.work += ev.workers * ev.chunk_size + ev.enlightened
        m.msgs_share += ev.share_sent
        m.msgs_profess += ev.profess_sent
        m.profess_draws += ev.profess_draws
        if ev.newly_enlightened and m.first_enlightened_round is None:
            m.first_enlightened_round = ev.round
        if ev.newly_halted:
            m.last_halt_round = ev.round
        m.survivor_count = ev.live
    if m.rounds == 0:
        m.survivor_count = 0
    return m


def normalizers(n: int, epsilon: Optional[float] = None) -> dict:
    lg = math.log2(n)
    out = {"nlogn": n * lg}
    # log2 log2 n is < 1 below n = 4; clamp so the normalizer stays positive
    out["nlognloglogn"] = n * lg * max(1.0, math.log2(lg)) if n > 1 else 1.0
    if epsilon is not None:
        out["n1eps"] = n ** (1 + epsilon)
    return out


SUMMARY_FIELDS = (
    "rounds",
    "time_units",
    "work",
    "messages",
    "msgs_share",
    "msgs_profess",
    "profess_draws",
    "survivor_count",
)


@dataclass
class SweepSummary:
    model: str
    rows: dict  # n -> {field_mean, field_max, ratio columns, runs}

    def ratio(self, metric: str, normalizer: str) -> dict:
        return {n: row[f"{metric}/{normalizer}"] for n, row in sorted(self.rows.items())}

    def spread(self, metric: str, normalizer: str) -> float:
        """max over n divided by min over n of the mean normalized metric."""
        vals = list(self.ratio(metric, normalizer).values())
        return max(vals) / min(vals)


def summarize(runs: Sequence[RunMetrics], model: str = "none", epsilon: Optional[float] = None) -> SweepSummary:
    by_n = defaultdict(list)
    for m in runs:
        if not m.truncated:
            by_n[m.n].append(m)
    rows = {}
    for n, group in sorted(by_n.items()):
        row = {"runs": len(group)}
        for name in SUMMARY_FIELDS:
            vals = np.array([getattr(m, name) for m in group], dtype=float)
            row[f"{name}_mean"] = float(vals.mean())
            row[f"{name}_max"] = float(vals.max())
        for key, denom in normalizers(n, epsilon).items():
            for name in ("work", "messages"):
                row[f"{name}/{key}"] = row[f"{name}_mean"] / denom
        rows[n] = row
    return SweepSummary(model, rows)


# Summary CSV: the first twelve columns are fixed; later ones are extra detail.
CSV_COLUMNS = (
    "seed",
    "n",
    "t",
    "model",
    "rounds",
    "time_units",
    "work",
    "msgs_share",
    "msgs_profess",
    "first_enlightened_round",
    "all_correct",
    "agreement",
    "last_halt_round",
    "profess_draws",
    "survivor_count",
    "truncated",
    "H",
    "K",
)


def csv_row(seed: int, model: str, metrics: RunMetrics, all_correct: bool, agreement: bool, H: float, K: float) -> dict:
    row = {
        "seed": seed,
        "model": model,
        "all_correct": int(all_correct),
        "agreement": int(agreement),
        "truncated": int(metrics.truncated),
        "H": H,
        "K": K,
    }
    for name in CSV_COLUMNS:
        if name not in row:
            value = getattr(metrics, name)
            row[name] = "" if value is None else value
    return {k: row[k] for k in CSV_COLUMNS}
