import numpy as np
import pytest
from conftest import SeparableQuadratic

from strads.baselines import CyclicPolicy, StaticBlockPolicy
from strads.config import SchedulerConfig
from strads.engine import SapEngine, SapPolicy, SchedulerCallbacks
from strads.lasso import LassoApplication
from strads.runtime import StradsRuntime, partition_variables, round_robin_run
from strads.utils import StradsConfigError, StradsNumericalError


class TestPartition:
    def test_disjoint_cover(self):
        parts = partition_variables(11, 3, np.random.default_rng(0))
        merged = np.concatenate(parts)
        assert sorted(merged.tolist()) == list(range(11))
        assert sorted(len(p) for p in parts) == [3, 4, 4]
        assert all(np.array_equal(p, np.sort(p)) for p in parts)

    def test_seeded(self):
        first = partition_variables(20, 4, np.random.default_rng(5))
        second = partition_variables(20, 4, np.random.default_rng(5))
        assert all(np.array_equal(a, b) for a, b in zip(first, second))

    @pytest.mark.parametrize("threads", [0, 6])
    def test_invalid(self, threads):
        with pytest.raises(StradsConfigError):
            partition_variables(5, threads, np.random.default_rng(0))


def test_single_thread_matches_engine(small_lasso, lasso_config, pool):
    cfg = lasso_config
    engine_app = LassoApplication.from_dataset(small_lasso, cfg)
    engine_trace = SapEngine(engine_app, SapPolicy(), cfg).run(pool, max_iter=60)
    runtime_app = LassoApplication.from_dataset(small_lasso, cfg)
    runtime_trace = StradsRuntime(runtime_app, SapPolicy, cfg).run(pool, max_iter=60)
    assert [r.dict() for r in runtime_trace.records] == [r.dict() for r in engine_trace.records]
    assert np.array_equal(runtime_app.beta, engine_app.beta)


class TestSeveralThreads:
    def run(self, small_lasso, cfg, pool, rounds=40):
        app = LassoApplication.from_dataset(small_lasso, cfg)
        reports = []
        runtime = StradsRuntime(app, SapPolicy, cfg, round_callbacks=[reports.append])
        trace = runtime.run(pool, max_iter=rounds)
        return runtime, trace, reports

    def test_round_robin_turns(self, small_lasso, lasso_config, pool):
        cfg = lasso_config.with_overrides(scheduler_threads=3)
        runtime, trace, reports = self.run(small_lasso, cfg, pool)
        assert [report.issuing_thread for report in reports] == [r % 3 for r in range(40)]
        assert [thread.rounds_issued for thread in runtime.threads] == [14, 13, 13]
        assert len(trace) == 40

    def test_threads_dispatch_only_owned_variables(self, small_lasso, lasso_config, pool):
        cfg = lasso_config.with_overrides(scheduler_threads=2)
        runtime, _, reports = self.run(small_lasso, cfg, pool)
        for report in reports:
            owned = runtime.threads[report.issuing_thread].owned_set
            assert set(report.schedule.variable_ids) <= owned

    def test_dependencies_stay_inside_partitions(self, small_lasso, lasso_config, pool):
        cfg = lasso_config.with_overrides(scheduler_threads=2)
        runtime, _, _ = self.run(small_lasso, cfg, pool)
        assert runtime.dependency_audit.calls > 0
        assert runtime.dependency_audit.cross_thread_calls == 0
        assert runtime.rho_audit.violations == 0
        assert runtime.rho_audit.pairs_checked > 0

    def test_deterministic(self, small_lasso, lasso_config, pool):
        cfg = lasso_config.with_overrides(scheduler_threads=2)
        _, first, _ = self.run(small_lasso, cfg, pool)
        _, second, _ = self.run(small_lasso, cfg, pool)
        assert first.objectives() == second.objectives()

    def test_objective_decreases(self, small_lasso, lasso_config, pool):
        cfg = lasso_config.with_overrides(scheduler_threads=2)
        _, trace, _ = self.run(small_lasso, cfg, pool, rounds=100)
        assert trace.final_objective < 0.5
        assert min(trace.objectives()) == pytest.approx(trace.final_objective, rel=1e-3)

    def test_each_thread_gets_its_own_policy(self, small_lasso, lasso_config, pool):
        cfg = lasso_config.with_overrides(scheduler_threads=2)
        runtime = StradsRuntime(LassoApplication.from_dataset(small_lasso, cfg), CyclicPolicy, cfg)
        assert runtime.threads[0].policy is not runtime.threads[1].policy


def test_static_policy_in_runtime(small_lasso, lasso_config, pool):
    cfg = lasso_config.with_overrides(scheduler_threads=2)
    app = LassoApplication.from_dataset(small_lasso, cfg)
    trace = round_robin_run(app, StaticBlockPolicy, cfg, pool)
    assert trace.scheduler == "static"
    assert len(trace) == cfg.max_iter or trace.final_objective < 0.5


def test_too_many_threads(quadratic, pool):
    cfg = SchedulerConfig(workers=1, candidates=1, scheduler_threads=11)
    with pytest.raises(StradsConfigError, match="cannot partition 10 variables over 11"):
        StradsRuntime(quadratic, SapPolicy, cfg)


def test_failure_carries_partial_trace(pool):
    app = SeparableQuadratic(np.ones(8), fail_on_call=4)
    cfg = SchedulerConfig(workers=2, candidates=3, scheduler_threads=2, max_iter=10)
    with pytest.raises(StradsNumericalError) as info:
        StradsRuntime(app, SapPolicy, cfg).run(pool)
    assert len(info.value.partial_trace) == 3


class UniformQuadratic(SeparableQuadratic):
    def callbacks(self):
        base = super().callbacks()
        return SchedulerCallbacks(
            sampling_fn=lambda ids: np.ones(len(ids)), dependency_fn=base.dependency_fn, progress_fn=base.progress_fn
        )


def test_thread_draws_cover_every_variable(pool):
    drawn = set()

    class RecordingSap(SapPolicy):
        def propose(self, owned, weights, cfg, rng):
            candidates = super().propose(owned, weights, cfg, rng)
            drawn.update(int(v) for v in candidates)
            return candidates

    app = UniformQuadratic(np.linspace(-1.0, 1.0, 400))
    cfg = SchedulerConfig(workers=4, candidates=10, scheduler_threads=4, clock="simulated")
    StradsRuntime(app, RecordingSap, cfg).run(pool, max_iter=400 // 10 * 20)
    assert drawn == set(range(400))


def test_local_importance_covers_owned_variables(small_lasso, lasso_config):
    cfg = lasso_config.with_overrides(scheduler_threads=2)
    runtime = StradsRuntime(LassoApplication.from_dataset(small_lasso, cfg), SapPolicy, cfg)
    for thread in runtime.threads:
        dist = thread.local_importance()
        assert np.array_equal(dist.variable_ids, thread.owned)
        assert np.allclose(dist.weights, 1e10 + cfg.eta)
