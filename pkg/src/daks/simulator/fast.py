"""Vectorized engine: knowledge held as per-task bitsets over global triples.

Each processor executes exactly one task per worker round, so a triple is
identified by (task, slot) where slot is the order in which the triple was
created for that task. Processor i knows triple (j, s) iff bit s of
``know[i, j]`` is set. Union of knowledge is a bitwise OR and the size of
R_i[j] is a popcount. Random draws go through the same per-processor streams
and the same protocol functions as the reference engine, so both engines
produce identical traces for a given seed.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from daks.metrics import RoundTrace, accumulate
from daks.protocol import choose_profess_targets, choose_share_target, execute_task
from daks.simulator.outcome import RunOutcome
from daks.simulator.setup import ExperimentConfig, RunSetup, prepare

WORKER, ENLIGHTENED, HALTED = 0, 1, 2


class InvariantViolation(AssertionError):
    pass


class Simulation:
    def __init__(self, config: ExperimentConfig, setup: Optional[RunSetup] = None, check_invariants: bool = False):
        self.config = config
        self.setup = setup or prepare(config)
        self.check = check_invariants
        n = self.n = config.n
        self.th = config.thresholds
        self.chunk_size = self.setup.chunk_map.chunk_size
        self.truth = self.setup.chunk_truth
        self.p = self.setup.profile.p
        self.crash_at = np.array([0 if c is None else c for c in self.setup.schedule.crash_round], dtype=np.int64)
        self.rngs = self.setup.rngs

        self.phase = np.zeros(n, dtype=np.int8)
        self.crashed = np.zeros(n, dtype=bool)
        self.prof_ctr = np.zeros(n, dtype=np.int64)
        self.profess_received = np.zeros(n, dtype=np.int64)
        self.ell = np.zeros(n, dtype=np.int64)
        self.draws = np.zeros(n, dtype=np.int64)
        self.enlightened_round = np.zeros(n, dtype=np.int64)
        self.halt_round = np.zeros(n, dtype=np.int64)
        self.results = np.full((n, n), -1, dtype=np.int8)

        self.words = 1
        self.know = np.zeros((n, n, 1), dtype=np.uint64)
        self.ones = np.zeros((n, 1), dtype=np.uint64)  # bits of triples whose value is 1
        self.count = np.zeros((n, n), dtype=np.int32)  # popcount of know, kept for workers
        self.slots = np.zeros(n, dtype=np.int64)
        self.triples = [[] for _ in range(n)]  # per task: (value, executor, round) by slot

        self.round = 0
        self.traces: list[RoundTrace] = []

    # -- helpers -----------------------------------------------------------

    def active(self) -> np.ndarray:
        return np.flatnonzero(~self.crashed & (self.phase != HALTED))

    def done(self) -> bool:
        return self.active().size == 0

    def _grow(self, needed_slots: int) -> None:
        words = -(-needed_slots // 64)
        if words <= self.words:
            return
        know = np.zeros((self.n, self.n, words), dtype=np.uint64)
        know[:, :, : self.words] = self.know
        ones = np.zeros((self.n, words), dtype=np.uint64)
        ones[:, : self.words] = self.ones
        self.know, self.ones, self.words = know, ones, words

    def knowledge_of(self, proc: int) -> tuple:
        """R_i as a tuple of frozensets of (value, executor, round), for checks."""
        out = []
        for j in range(self.n):
            bits = np.unpackbits(self.know[proc - 1, j].view(np.uint8), bitorder="little")
            out.append(frozenset(self.triples[j][s] for s in np.flatnonzero(bits)))
        return tuple(out)

    # -- stages ------------------------------------------------------------

    def _send(self, active):
        n = self.n
        senders, targets, kinds = [], [], []
        share = profess = draws_total = 0
        for i in active:
            if self.phase[i] == WORKER:
                senders.append(i)
                targets.append(choose_share_target(self.rngs[i], n) - 1)
                kinds.append(False)
                share += 1
            else:
                picked, draws = choose_profess_targets(self.rngs[i], n, int(self.ell[i]))
                self.ell[i] += 1
                self.draws[i] += draws
                draws_total += draws
                senders.extend([i] * len(picked))
                targets.extend(q - 1 for q in picked)
                kinds.extend([True] * len(picked))
                profess += len(picked)
        return (
            np.array(senders, dtype=np.int64),
            np.array(targets, dtype=np.int64),
            np.array(kinds, dtype=bool),
            share,
            profess,
            draws_total,
        )

    def _receive(self, senders, targets, kinds) -> int:
        ok = ~self.crashed[targets] & (self.phase[targets] != HALTED)
        senders, targets, kinds = senders[ok], targets[ok], kinds[ok]
        prof_targets = targets[kinds]
        np.add.at(self.prof_ctr, prof_targets, 1)
        self.profess_received += np.bincount(prof_targets, minlength=self.n)

        merge = senders != targets
        senders, targets = senders[merge], targets[merge]
        if targets.size:
            order = np.argsort(targets, kind="stable")
            senders, targets = senders[order], targets[order]
            recv, starts, sizes = np.unique(targets, return_index=True, return_counts=True)
            # rank of each message within its receiver's inbox; layer k holds
            # the k-th message of every inbox, so its receivers are distinct
            rank = np.arange(targets.size) - np.repeat(starts, sizes)
            slot = np.repeat(np.arange(recv.size), sizes)
            flat = self.know.reshape(self.n, -1)
            merged = flat[senders[rank == 0]]
            for k in range(1, int(sizes.max())):
                layer = rank == k
                merged[slot[layer]] |= flat[senders[layer]]
            # reads above all see send-time knowledge; write back at the end
            flat[recv] |= merged
            learners = recv[self.phase[recv] == WORKER]
            if learners.size:
                self.count[learners] = np.bitwise_count(self.know[learners]).sum(axis=-1, dtype=np.int32)
        return int(ok.sum())

    def _compute(self, workers, r):
        n = self.n
        if workers.size == 0:
            return []
        tasks = np.empty(workers.size, dtype=np.int64)
        values = np.empty(workers.size, dtype=np.int8)
        slots = np.empty(workers.size, dtype=np.int64)
        for k, i in enumerate(workers):
            j, v = execute_task(self.rngs[i], n, self.truth, self.p[i])
            j -= 1
            tasks[k], values[k], slots[k] = j, v, self.slots[j]
            self.slots[j] += 1
            self.triples[j].append((v, int(i) + 1, r))
        self._grow(int(self.slots.max()))
        word = slots >> 6
        bit = np.left_shift(np.uint64(1), (slots & 63).astype(np.uint64))
        self.know[workers, tasks, word] |= bit
        is_one = values == 1
        np.bitwise_or.at(self.ones, (tasks[is_one], word[is_one]), bit[is_one])
        self.count[workers, tasks] += 1

        ready = workers[self.count[workers].min(axis=1) >= self.th.results_needed]
        if ready.size:
            ones = np.bitwise_count(self.know[ready] & self.ones[None]).sum(axis=-1, dtype=np.int32)
            # plurality with ties to 0
            self.results[ready] = (2 * ones > self.count[ready]).astype(np.int8)
            self.phase[ready] = ENLIGHTENED
            self.enlightened_round[ready] = r
        return [int(i) + 1 for i in ready]

    def step_round(self) -> RoundTrace:
        r = self.round + 1
        crashing = np.flatnonzero((self.crash_at == r) & ~self.crashed & (self.phase != HALTED))
        self.crashed[crashing] = True
        active = self.active()
        if active.size == 0:
            # every unhalted processor crashed at the start of this round
            return self._idle_round(r, [int(i) + 1 for i in crashing], int((~self.crashed).sum()))
        workers = active[self.phase[active] == WORKER]
        before = self.know.copy() if self.check else None

        senders, targets, kinds, share, profess, draws = self._send(active)
        delivered = self._receive(senders, targets, kinds)
        newly_enlightened = self._compute(workers, r)

        halting = active[self.prof_ctr[active] >= self.th.profess_needed]
        if np.any(self.phase[halting] != ENLIGHTENED):
            raise InvariantViolation(f"round {r}: a worker reached the halting threshold")
        self.phase[halting] = HALTED
        self.halt_round[halting] = r

        if self.check:
            self._check_invariants(before)
        self.round = r
        trace = RoundTrace(
            round=r,
            chunk_size=self.chunk_size,
            live=int((~self.crashed).sum()),
            workers=int(workers.size),
            enlightened=int(active.size - workers.size),
            crashed=[int(i) + 1 for i in crashing],
            share_sent=share,
            profess_sent=profess,
            profess_draws=draws,
            delivered=delivered,
            dropped=senders.size - delivered,
            newly_enlightened=newly_enlightened,
            newly_halted=[int(i) + 1 for i in halting],
        )
        self.traces.append(trace)
        return trace

    def _idle_round(self, r: int, crashing: list, live: int) -> RoundTrace:
        self.round = r
        trace = RoundTrace(round=r, chunk_size=self.chunk_size, live=live, workers=0, enlightened=0, crashed=crashing)
        self.traces.append(trace)
        return trace

    def _check_invariants(self, before) -> None:
        if np.any((before & ~self.know[:, :, : before.shape[2]]) != 0):
            raise InvariantViolation("knowledge shrank")
        settled = self.phase != WORKER
        if np.any(self.results[settled] < 0):
            raise InvariantViolation("enlightened or halted processor without results")
        if np.any(self.ell[~settled] != 0):
            raise InvariantViolation("worker with nonzero profess exponent")
        if np.any(self.prof_ctr != self.profess_received):
            raise InvariantViolation("profess counter differs from delivered profess messages")
        halted = self.phase == HALTED
        if np.any(self.prof_ctr[halted] < self.th.profess_needed):
            raise InvariantViolation("halted below the profess threshold")

    def run(self) -> RunOutcome:
        cap = self.config.round_cap
        while not self.done() and self.round < cap:
            self.step_round()
        return self.outcome()

    def outcome(self) -> RunOutcome:
        truncated = not self.done()
        ids = np.arange(1, self.n + 1)
        return RunOutcome(
            config=self.config,
            chunk_map=self.setup.chunk_map,
            truth=self.setup.truth,
            chunk_truth=self.truth,
            phase=self.phase.copy(),
            results=self.results.copy(),
            prof_ctr=self.prof_ctr.copy(),
            ell=self.ell.copy(),
            enlightened_round=self.enlightened_round.copy(),
            halt_round=self.halt_round.copy(),
            profess_draws=self.draws.copy(),
            profess_received=self.profess_received.copy(),
            crashed=frozenset(int(i) for i in ids[self.crashed]),
            halted=frozenset(int(i) for i in ids[self.phase == HALTED]),
            metrics=accumulate(self.traces, n=self.n, t=self.config.t, truncated=truncated),
            truncated=truncated,
            traces=self.traces,
        )
