import numpy as np
import pytest
from conftest import SeparableQuadratic

from strads.config import SchedulerConfig
from strads.core import VariableBlock
from strads.engine import (
    ImportanceDist,
    RhoAudit,
    RunClock,
    SapEngine,
    SapPolicy,
    execute_round,
    filter_dependent,
    merge_blocks,
    order_by_importance,
    plan_round,
    sample_candidates,
    scheduler_rng,
)
from strads.utils import DegenerateDistributionError, StradsNumericalError


class TestImportanceDist:
    def test_negative_weight(self):
        with pytest.raises(StradsNumericalError, match="negative importance weight for variable 7"):
            ImportanceDist([3, 7], [1.0, -0.5]).validate()

    def test_all_zero(self):
        with pytest.raises(DegenerateDistributionError, match="degenerate importance distribution"):
            ImportanceDist([0, 1], [0.0, 0.0]).validate()

    def test_non_finite(self):
        with pytest.raises(StradsNumericalError, match="finite"):
            ImportanceDist([0, 1], [np.inf, 1.0]).validate()


class TestSampleCandidates:
    def test_distinct_and_positive_only(self):
        dist = ImportanceDist(np.arange(6), [1.0, 0.0, 2.0, 0.0, 3.0, 1.0])
        drawn = sample_candidates(dist, 10, np.random.default_rng(0))
        assert sorted(drawn.tolist()) == [0, 2, 4, 5]

    def test_count(self):
        dist = ImportanceDist.uniform(np.arange(20))
        drawn = sample_candidates(dist, 5, np.random.default_rng(1))
        assert len(set(drawn.tolist())) == 5

    def test_uniform_weights_give_uniform_frequencies(self):
        dist = ImportanceDist.uniform(np.arange(50))
        rng = np.random.default_rng(8)
        counts = np.zeros(50)
        for _ in range(10_000):
            counts[sample_candidates(dist, 10, rng)] += 1
        expected = 10_000 * 10 / 50
        sigma = np.sqrt(10_000 * 0.2 * 0.8)
        assert np.all(np.abs(counts - expected) <= 5 * sigma)

    def test_same_seed_same_draw(self):
        dist = ImportanceDist(np.arange(50), np.linspace(0.1, 5.0, 50))
        first = sample_candidates(dist, 8, scheduler_rng(4, 0))
        second = sample_candidates(dist, 8, scheduler_rng(4, 0))
        assert np.array_equal(first, second)
        other_thread = sample_candidates(dist, 8, scheduler_rng(4, 1))
        assert not np.array_equal(first, other_thread)

    def test_first_draw_follows_weights(self):
        dist = ImportanceDist(np.arange(4), [100.0, 1.0, 1.0, 1.0])
        rng = np.random.default_rng(5)
        hits = sum(int(sample_candidates(dist, 1, rng)[0] == 0) for _ in range(2000))
        assert hits / 2000 == pytest.approx(100 / 103, abs=0.02)

    def test_degenerate(self):
        with pytest.raises(DegenerateDistributionError):
            sample_candidates(ImportanceDist([0, 1], [0.0, 0.0]), 1, np.random.default_rng(0))


def test_order_by_importance_breaks_ties_by_id():
    assert order_by_importance(np.array([5, 2, 9]), np.array([1.0, 2.0, 2.0])) == [2, 9, 5]


class TestFilterDependent:
    coupling = np.array(
        [
            [1.0, 0.9, 0.05, 0.0],
            [0.9, 1.0, 0.0, 0.3],
            [0.05, 0.0, 1.0, 0.0],
            [0.0, 0.3, 0.0, 1.0],
        ]
    )

    def dep(self, j, k):
        return self.coupling[j, k]

    def test_greedy_in_order(self):
        assert filter_dependent([0, 1, 2, 3], self.dep, 0.1, 4) == [0, 2, 3]
        assert filter_dependent([1, 0, 2, 3], self.dep, 0.1, 4) == [1, 2]

    def test_cap(self):
        assert filter_dependent([0, 2, 3], self.dep, 0.1, 2) == [0, 2]

    def test_negative_coupling_uses_magnitude(self):
        assert filter_dependent([0, 1], lambda j, k: -0.5, 0.1, 2) == [0]


class TestMergeBlocks:
    def test_longest_processing_time(self):
        blocks = [VariableBlock((i,), w) for i, w in enumerate([5.0, 4.0, 3.0, 3.0, 2.0, 1.0])]
        merged = merge_blocks(blocks, 2)
        assert [block.workload for block in merged] == [9.0, 9.0]
        assert merged[0].variable_ids == (0, 3, 5)
        assert merged[1].variable_ids == (1, 2, 4)

    def test_fewer_blocks_than_target(self):
        merged = merge_blocks([VariableBlock((4,), 1.0), VariableBlock((2,), 3.0)], 8)
        assert len(merged) == 2

    def test_invalid(self):
        with pytest.raises(ValueError, match="at least one block"):
            merge_blocks([], 2)
        with pytest.raises(ValueError, match="target must be >= 1"):
            merge_blocks([VariableBlock((0,), 1.0)], 0)


def test_rho_audit_counts_pairs():
    audit = RhoAudit()
    audit.check([0, 1, 2], lambda j, k: 0.05, 0.1)
    assert audit.pairs_checked == 3
    with pytest.raises(StradsNumericalError, match="exceed rho=0.1"):
        audit.check([0, 1], lambda j, k: 0.5, 0.1)
    assert audit.violations == 1


def test_plan_round_balances_workload(quadratic):
    schedule = plan_round(quadratic, [3, 1, 7, 0, 5], round_id=2, thread_id=1, workers=2)
    assert sorted(schedule.variable_ids) == [0, 1, 3, 5, 7]
    assert len(schedule.blocks) == 2
    assert schedule.critical_path_cost() == 3.0
    assert all(block.owner_thread == 1 for block in schedule.blocks)


class TestExecuteRound:
    def test_commits_updates(self, quadratic, pool):
        callbacks = quadratic.callbacks()
        schedule = plan_round(quadratic, [0, 9], 0, 0, 4)
        report = execute_round(quadratic, callbacks, np.arange(10), schedule, pool, snapshot_version=0)
        assert quadratic.x[0] == -1.0 and quadratic.x[9] == 1.0
        assert report.deltas == {0: 1.0, 9: 1.0}
        assert [u.variable_id for u in report.updates] == [0, 9]
        assert quadratic.delta[0] == 1.0

    def test_failed_round_restores_state(self, pool):
        app = SeparableQuadratic(np.arange(1.0, 5.0), fail_on_call=1)
        before = app.checkpoint()
        schedule = plan_round(app, [0, 1, 2], 0, 0, 4)
        with pytest.raises(StradsNumericalError, match="non-finite objective"):
            execute_round(app, app.callbacks(), np.arange(4), schedule, pool, snapshot_version=0)
        assert np.array_equal(app.x, before[0])
        assert np.array_equal(app.delta, before[1])

    def test_worker_failure_restores_state(self, pool, monkeypatch):
        app = SeparableQuadratic(np.arange(1.0, 5.0))

        def broken(dispatch, snapshot):
            raise RuntimeError("kernel crashed")

        monkeypatch.setattr(app, "update_kernel", broken)
        schedule = plan_round(app, [0, 1], 0, 0, 4)
        with pytest.raises(StradsNumericalError, match="kernel crashed"):
            execute_round(app, app.callbacks(), np.arange(4), schedule, pool, snapshot_version=0)
        assert np.all(app.x == 0.0)


class TestSapEngine:
    def test_solves_separable_problem(self, quadratic, pool):
        cfg = SchedulerConfig(workers=3, candidates=5, rho=0.1, max_iter=40, seed=1)
        engine = SapEngine(quadratic, SapPolicy(), cfg)
        trace = engine.run(pool)
        assert len(trace) == 40
        assert trace.final_objective == pytest.approx(0.0)
        assert engine.monitor.summary()["rounds"] == 40
        engine.run(pool, max_iter=5)
        assert engine.monitor.summary()["rounds"] == 5
        assert engine.audit.violations == 0

    def test_never_dispatches_coupled_pair(self, pool):
        coupling = np.zeros((6, 6))
        coupling[0, 1] = coupling[1, 0] = 0.9
        app = SeparableQuadratic(np.ones(6), coupling=coupling)
        seen = []
        cfg = SchedulerConfig(workers=4, candidates=6, rho=0.1, max_iter=15, seed=3)
        SapEngine(app, SapPolicy(), cfg, round_callbacks=[lambda report: seen.append(report)]).run(pool)
        assert seen
        for report in seen:
            assert not {0, 1} <= set(report.schedule.variable_ids)
            assert len(report.schedule.variable_ids) <= 4

    def test_untouched_variables_go_first(self, pool):
        app = SeparableQuadratic(np.ones(12))
        app.delta[:] = 0.0
        app.delta[[2, 5, 8]] = 1e10
        cfg = SchedulerConfig(workers=3, candidates=6, max_iter=1, seed=0)
        report = SapEngine(app, SapPolicy(), cfg).run_round(pool)
        assert sorted(report.schedule.variable_ids) == [2, 5, 8]

    def test_owned_subset(self, quadratic, pool):
        cfg = SchedulerConfig(workers=2, candidates=3, max_iter=10, seed=2)
        engine = SapEngine(quadratic, SapPolicy(), cfg, owned=[6, 2, 4])
        engine.run(pool)
        assert np.all(quadratic.x[[0, 1, 3, 5, 7, 8, 9]] == 0.0)

    def test_same_seed_same_trace(self, pool):
        runs = []
        for _ in range(2):
            app = SeparableQuadratic(np.linspace(0.0, 3.0, 15))
            cfg = SchedulerConfig(workers=2, candidates=4, max_iter=12, seed=9, clock="simulated")
            runs.append([record.dict() for record in SapEngine(app, SapPolicy(), cfg).run(pool).records])
        assert runs[0] == runs[1]

    def test_degenerate_distribution_stops_run(self, pool):
        app = SeparableQuadratic(np.ones(4))
        app.delta[:] = 0.0
        callbacks = app.callbacks()
        callbacks.sampling_fn = lambda ids: np.zeros(len(ids))
        cfg = SchedulerConfig(workers=2, candidates=3, max_iter=5)
        with pytest.raises(DegenerateDistributionError) as info:
            SapEngine(app, SapPolicy(), cfg, callbacks=callbacks).run(pool)
        assert info.value.partial_trace == []

    def test_failure_keeps_partial_trace(self, pool):
        app = SeparableQuadratic(np.ones(8), fail_on_call=3)
        cfg = SchedulerConfig(workers=2, candidates=3, max_iter=10)
        with pytest.raises(StradsNumericalError) as info:
            SapEngine(app, SapPolicy(), cfg).run(pool)
        assert [record.iter for record in info.value.partial_trace] == [1, 2]


def test_simulated_clock_accumulates_cost(quadratic, pool):
    cfg = SchedulerConfig(workers=2, candidates=4, max_iter=3, clock="simulated")
    trace = SapEngine(quadratic, SapPolicy(), cfg).run(pool)
    assert [record.wallclock_s for record in trace.records] == [1.0, 2.0, 3.0]


def test_wall_clock_is_monotone(quadratic, pool):
    cfg = SchedulerConfig(workers=2, candidates=4, max_iter=5, clock="wall")
    times = [record.wallclock_s for record in SapEngine(quadratic, SapPolicy(), cfg).run(pool).records]
    assert times == sorted(times)
    assert RunClock("wall").simulated == 0.0
