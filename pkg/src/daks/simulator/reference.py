"""Direct composition of the per-processor protocol functions.

Slow (knowledge is held as Python sets of triples) but literal; used to
cross-check the fast engine and to inspect full processor states.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Optional

import numpy as np

from daks.metrics import RoundTrace, accumulate
from daks.protocol import (
    MessageKind,
    Phase,
    ProcessorState,
    compute_phase,
    halt,
    halt_check,
    receive_phase,
    send_phase,
)
from daks.simulator.outcome import RunOutcome
from daks.simulator.setup import ExperimentConfig, RunSetup, prepare

PHASE_CODE = {Phase.WORKER: 0, Phase.ENLIGHTENED: 1, Phase.HALTED: 2}


class ReferenceSimulation:
    def __init__(self, config: ExperimentConfig, setup: Optional[RunSetup] = None):
        self.config = config
        self.setup = setup or prepare(config)
        n = self.n = config.n
        self.th = config.thresholds
        self.chunk_size = self.setup.chunk_map.chunk_size
        self.truth = [int(b) for b in self.setup.chunk_truth]
        self.p = self.setup.profile.p
        self.crash_at = self.setup.schedule.crash_round
        self.rngs = self.setup.rngs
        self.states = [ProcessorState.initial(i + 1, n) for i in range(n)]
        self.crashed = [False] * n
        self.delivered_profess = [0] * n
        self.draws = [0] * n
        self.enlightened_round = [0] * n
        self.halt_round = [0] * n
        self.round = 0
        self.traces: list[RoundTrace] = []

    def active(self) -> list[int]:
        return [i for i in range(self.n) if not self.crashed[i] and self.states[i].phase is not Phase.HALTED]

    def done(self) -> bool:
        return not self.active()

    def step_round(self) -> RoundTrace:
        r = self.round + 1
        crashing = []
        for i in range(self.n):
            if self.crash_at[i] == r and not self.crashed[i] and self.states[i].phase is not Phase.HALTED:
                self.crashed[i] = True
                crashing.append(i + 1)
        active = self.active()
        if not active:
            # every unhalted processor crashed at the start of this round
            self.round = r
            trace = RoundTrace(
                round=r, chunk_size=self.chunk_size, live=self.n - sum(self.crashed), workers=0, enlightened=0,
                crashed=crashing,
            )  # fmt: skip
            self.traces.append(trace)
            return trace
        workers = [i for i in active if self.states[i].phase is Phase.WORKER]

        outgoing = []
        share = profess = draws_total = 0
        for i in active:
            msgs, self.states[i], draws = send_phase(self.states[i], self.rngs[i], self.n)
            outgoing.extend(msgs)
            draws_total += draws
            self.draws[i] += draws
            if self.states[i].phase is Phase.WORKER:
                share += len(msgs)
            else:
                profess += len(msgs)

        inbox = defaultdict(list)
        delivered = 0
        for q, m in outgoing:
            k = q - 1
            if self.crashed[k] or self.states[k].phase is Phase.HALTED:
                continue
            inbox[k].append(m)
            delivered += 1
            if m.kind is MessageKind.PROFESS:
                self.delivered_profess[k] += 1
        for i in active:
            self.states[i] = receive_phase(self.states[i], inbox[i])

        newly_enlightened = []
        for i in active:
            was = self.states[i].phase
            self.states[i], _ = compute_phase(
                self.states[i], self.rngs[i], self.truth, float(self.p[i]), self.th, self.chunk_size
            )
            if was is Phase.WORKER and self.states[i].phase is Phase.ENLIGHTENED:
                newly_enlightened.append(i + 1)
                self.enlightened_round[i] = r

        newly_halted = []
        for i in active:
            if halt_check(self.states[i], self.th):
                self.states[i] = halt(self.states[i])
                self.halt_round[i] = r
                newly_halted.append(i + 1)

        self.round = r
        trace = RoundTrace(
            round=r,
            chunk_size=self.chunk_size,
            live=self.n - sum(self.crashed),
            workers=len(workers),
            enlightened=len(active) - len(workers),
            crashed=crashing,
            share_sent=share,
            profess_sent=profess,
            profess_draws=draws_total,
            delivered=delivered,
            dropped=len(outgoing) - delivered,
            newly_enlightened=newly_enlightened,
            newly_halted=newly_halted,
        )
        self.traces.append(trace)
        return trace

    def run(self) -> RunOutcome:
        cap = self.config.round_cap
        while not self.done() and self.round < cap:
            self.step_round()
        return self.outcome()

    def outcome(self) -> RunOutcome:
        truncated = not self.done()
        results = np.array(
            [[-1 if v is None else v for v in s.results] for s in self.states], dtype=np.int8
        ).reshape(self.n, self.n)
        return RunOutcome(
            config=self.config,
            chunk_map=self.setup.chunk_map,
            truth=self.setup.truth,
            chunk_truth=self.setup.chunk_truth,
            phase=np.array([PHASE_CODE[s.phase] for s in self.states], dtype=np.int8),
            results=results,
            prof_ctr=np.array([s.prof_ctr for s in self.states], dtype=np.int64),
            ell=np.array([s.ell for s in self.states], dtype=np.int64),
            enlightened_round=np.array(self.enlightened_round, dtype=np.int64),
            halt_round=np.array(self.halt_round, dtype=np.int64),
            profess_draws=np.array(self.draws, dtype=np.int64),
            profess_received=np.array(self.delivered_profess, dtype=np.int64),
            crashed=frozenset(i + 1 for i in range(self.n) if self.crashed[i]),
            halted=frozenset(s.me for s in self.states if s.phase is Phase.HALTED),
            metrics=accumulate(self.traces, n=self.n, t=self.config.t, truncated=truncated),
            truncated=truncated,
            traces=self.traces,
        )
