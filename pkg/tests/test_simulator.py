from dataclasses import replace

import numpy as np
import pytest

from daks.adversary import AdversaryError, CrashModel, CrashSchedule, ErrorProfile
from daks.protocol import Phase, ResultTriple
from daks.simulator import (
    ConfigError,
    ExperimentConfig,
    ReferenceSimulation,
    Simulation,
    build_chunk_map,
    prepare,
    run,
    trace_equal,
)
from daks.simulator.fast import ENLIGHTENED


def test_chunk_map_ceiling_partition():
    cmap = build_chunk_map(10, 4)
    assert cmap.chunk_size == 3
    assert [list(cmap.tasks(j)) for j in range(1, 5)] == [[1, 2, 3], [4, 5, 6], [7, 8, 9], [10]]


def test_chunk_map_identity():
    cmap = build_chunk_map(16, 16)
    assert cmap.chunk_size == 1
    assert [list(cmap.tasks(j)) for j in range(1, 17)] == [[j] for j in range(1, 17)]


def test_chunk_map_full_chunks():
    cmap = build_chunk_map(64, 16)
    assert cmap.chunk_size == 4
    assert cmap.lengths().tolist() == [4] * 16
    assert [cmap.chunk_of(t) for t in (1, 4, 5, 64)] == [1, 1, 2, 16]


def test_chunk_map_rejects_fewer_tasks():
    with pytest.raises(ConfigError):
        build_chunk_map(3, 4)


def test_config_validation():
    with pytest.raises(ConfigError, match="^t:"):
        ExperimentConfig(n=8, t=4)
    with pytest.raises(ConfigError, match="^max_rounds:"):
        ExperimentConfig(n=8, max_rounds=0)
    with pytest.raises(ConfigError, match="^bogus:"):
        ExperimentConfig.from_dict({"n": 4, "bogus": 1})
    assert ExperimentConfig(n=8, t=20).round_cap == 64 * 8 * 3


def test_single_processor_golden_trace():
    out = run(ExperimentConfig(n=1, seed=0))
    # round 1: share to self, execute the only task, enlighten (threshold floors to 1)
    # round 2: profess to self once, prof_ctr reaches 1, halt
    got = [tr.to_dict() for tr in out.traces]
    assert got == [
        dict(round=1, chunk_size=1, live=1, workers=1, enlightened=0, crashed=[], share_sent=1, profess_sent=0,
             profess_draws=0, delivered=1, dropped=0, newly_enlightened=[1], newly_halted=[]),
        dict(round=2, chunk_size=1, live=1, workers=0, enlightened=1, crashed=[], share_sent=0, profess_sent=1,
             profess_draws=1, delivered=1, dropped=0, newly_enlightened=[], newly_halted=[1]),
    ]  # fmt: skip
    assert out.halted == {1}
    assert out.task_results(1).tolist() == out.truth.tolist()
    m = out.metrics
    assert (m.rounds, m.msgs_share, m.msgs_profess, m.work, m.first_enlightened_round, m.last_halt_round) == (2, 1, 1, 2, 1, 2)


def test_noise_free_sixteen():
    out = run(ExperimentConfig(n=16, seed=3))
    assert out.halted == set(range(1, 17))
    for i in range(1, 17):
        assert out.task_results(i).tolist() == out.truth.tolist()
    assert out.all_correct and out.agreement and not out.truncated


def test_runs_are_deterministic():
    cfg = ExperimentConfig(n=32, seed=5, target_p=0.2, model="mfp", aggressiveness="attrition", horizon=20, zeta=0.2)
    a, b = run(cfg), run(cfg)
    assert trace_equal(a.traces, b.traces)
    assert np.array_equal(a.results, b.results)


ENGINE_CASES = [
    dict(n=1),
    dict(n=2, K=3),
    dict(n=5, t=13, target_p=0.2, profile_mode="spread"),
    dict(n=16),
    dict(n=16, target_p=0.3, zeta=0.19, model="mfp", aggressiveness="cliff", cliff_round=3),
    dict(n=20, t=50, K=2, target_p=0.1, model="mpl", aggressiveness="attrition", horizon=15),
    dict(n=24, H=0.5, K=1.5, target_p=0.25, zeta=0.2, profile_mode="constant"),
    dict(n=32, K=3, model="mfp", epsilon=0.3, aggressiveness="cliff", cliff_round=1),
]


@pytest.mark.parametrize("kw", ENGINE_CASES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fast_engine_matches_reference(kw, seed):
    cfg = ExperimentConfig(seed=seed, **kw)
    setup_a, setup_b = prepare(cfg), prepare(cfg)
    fast = Simulation(cfg, setup_a, check_invariants=True)
    ref = ReferenceSimulation(cfg, setup_b)
    a, b = fast.run(), ref.run()
    assert trace_equal(a.traces, b.traces)
    for name in ("phase", "results", "prof_ctr", "ell", "enlightened_round", "halt_round", "profess_draws"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    assert a.halted == b.halted and a.crashed == b.crashed
    # full knowledge sets agree, not just their sizes
    for i in range(1, cfg.n + 1):
        assert fast.knowledge_of(i) == tuple(
            frozenset((tr.value, tr.executor, tr.round) for tr in s) for s in ref.states[i - 1].knowledge
        )


def test_enlightened_processors_send_no_shares():
    cfg = ExperimentConfig(n=8, seed=0)
    sim = Simulation(cfg)
    sim.phase[:] = ENLIGHTENED
    sim.results[:] = 0
    tr = sim.step_round()
    assert tr.share_sent == 0 and tr.workers == 0
    assert tr.profess_sent > 0


def test_crashing_processor_is_silent():
    crash = (None, 1, None, None)
    sched = CrashSchedule(crash, CrashModel("mpl", c=1))
    cfg = ExperimentConfig(n=4, seed=0)
    ref = ReferenceSimulation(cfg, prepare(cfg, sched, ErrorProfile(np.zeros(4))))
    tr = ref.step_round()
    assert tr.crashed == [2]
    assert tr.share_sent == 3 and tr.workers == 3
    # its inbox is discarded and its state frozen
    assert ref.states[1].round == 0
    assert all(len(s) == 0 for s in ref.states[1].knowledge)
    assert tr.delivered + tr.dropped == tr.share_sent


def test_enlightened_and_halted_in_same_round():
    # three enlightened processors with saturated fanout storm a fresh worker
    n = 4
    cfg = ExperimentConfig(n=n, H=1.0, K=0.5, seed=0)
    ref = ReferenceSimulation(cfg)
    assert ref.th.profess_needed == 2 and ref.th.results_needed == 1
    full = tuple(frozenset({ResultTriple(0, 2, 1)}) for _ in range(n))
    for i in (1, 2, 3):
        ref.states[i] = replace(ref.states[i], phase=Phase.ENLIGHTENED, knowledge=full, results=(0,) * n, ell=5)
    tr = ref.step_round()
    assert 1 in tr.newly_enlightened
    assert 1 in tr.newly_halted
    assert ref.states[0].phase is Phase.HALTED
    assert ref.states[0].prof_ctr >= 2


def test_message_conservation():
    cfg = ExperimentConfig(n=64, seed=2, target_p=0.2, zeta=0.2, model="mfp", aggressiveness="attrition", horizon=30)
    out = run(cfg)
    for tr in out.traces:
        assert tr.delivered + tr.dropped == tr.share_sent + tr.profess_sent
    assert np.array_equal(out.prof_ctr, out.profess_received)


def test_halted_processors_have_results_and_thresholds():
    cfg = ExperimentConfig(n=48, seed=9, target_p=0.3, zeta=0.15)
    out = run(cfg)
    th = cfg.thresholds
    for i in out.halted:
        assert np.all(out.results[i - 1] >= 0)
        assert out.prof_ctr[i - 1] >= th.profess_needed
        assert out.enlightened_round[i - 1] <= out.halt_round[i - 1]


def test_fanout_law_per_processor():
    out = run(ExperimentConfig(n=128, seed=4))
    unit = 7
    for i in out.halted:
        m = out.halt_round[i - 1] - out.enlightened_round[i - 1]
        expected = sum(min(2**k * unit, 128 * unit) for k in range(m))
        assert out.profess_draws[i - 1] == expected
        assert out.ell[i - 1] == m


def test_chunking_neutrality():
    a = run(ExperimentConfig(n=64, t=64, seed=11))
    b = run(ExperimentConfig(n=64, t=256, seed=11))
    assert a.metrics.messages == b.metrics.messages
    assert [tr.newly_enlightened for tr in a.traces] == [tr.newly_enlightened for tr in b.traces]
    assert [tr.newly_halted for tr in a.traces] == [tr.newly_halted for tr in b.traces]
    assert b.metrics.time_units == 4 * a.metrics.time_units == 4 * b.metrics.rounds
    assert b.all_correct
    assert b.task_results(1).tolist() == b.truth.tolist()


def test_uneven_chunks_expand_to_all_tasks():
    out = run(ExperimentConfig(n=4, t=10, seed=1))
    assert out.chunk_map.chunk_size == 3
    for i in out.halted:
        assert out.task_results(i).tolist() == out.truth.tolist()


def test_chunk_results_with_errors_expand_by_complement():
    out = run(ExperimentConfig(n=4, t=8, seed=0))
    out.results[0, 1] ^= 1  # pretend processor 1 got chunk 2 wrong
    got = out.task_results(1)
    assert got[2:4].tolist() == (1 - out.truth[2:4]).tolist()
    assert got[:2].tolist() == out.truth[:2].tolist()
    assert not out.correct(1)


def test_round_cap_truncates():
    out = run(ExperimentConfig(n=32, seed=0, max_rounds=5))
    assert out.truncated and out.metrics.truncated
    assert out.metrics.rounds == 5
    assert not out.all_correct


def test_invalid_adversary_refused_before_round_one():
    cfg = ExperimentConfig(n=4)
    with pytest.raises(AdversaryError):
        prepare(cfg, CrashSchedule.benign(4), ErrorProfile(np.full(4, 0.6)))
    with pytest.raises(AdversaryError):
        run(ExperimentConfig(n=4, target_p=0.6))


def test_crashed_never_halt():
    cfg = ExperimentConfig(n=64, seed=3, model="mfp", aggressiveness="cliff", cliff_round=2)
    out = run(cfg)
    assert len(out.crashed) == 56
    assert not (out.crashed & out.halted)
    assert out.halted | out.crashed == set(range(1, 65))
    assert out.metrics.survivor_count == 8


def test_last_unhalted_processor_crashing_ends_the_run():
    # the floor is met by processors that already halted; the final round only records the crash
    cfg = ExperimentConfig(n=8, seed=1, model="mfp", aggressiveness="attrition", horizon=12, H=0.5, K=1.0)
    a = Simulation(cfg, check_invariants=True).run()
    b = ReferenceSimulation(cfg).run()
    assert trace_equal(a.traces, b.traces)
    last = a.traces[-1]
    assert (last.workers, last.enlightened, last.crashed) == (0, 0, [1])
    assert not a.truncated and a.metrics.rounds == last.round
    assert a.halted | a.crashed == set(range(1, 9))
