import numpy as np
import pytest
from scipy.stats import chisquare

from strads.baselines import (
    SCHEDULER_MAPPING,
    CyclicPolicy,
    RandomPolicy,
    StaticBlockPolicy,
    random_schedule,
    static_block_schedule,
    uniform_candidates,
)
from strads.config import SchedulerConfig
from strads.engine import SapPolicy, SchedulerCallbacks
from strads.utils import StradsConfigError


def no_importance(ids):
    raise AssertionError("this policy must not read importance weights")


def callbacks_with(dep) -> SchedulerCallbacks:
    return SchedulerCallbacks(sampling_fn=no_importance, dependency_fn=dep, progress_fn=lambda updates: None)


def test_mapping_names():
    assert set(SCHEDULER_MAPPING) == {"sap", "static", "random", "cyclic"}
    assert SCHEDULER_MAPPING["sap"] is SapPolicy


class TestRandom:
    def test_schedule(self):
        picked = random_schedule(10, 4, np.random.default_rng(0))
        assert len(picked) == len(set(picked)) == 4
        assert all(0 <= v < 10 for v in picked)

    def test_too_many_workers(self):
        with pytest.raises(StradsConfigError, match="cannot schedule 5 of 3"):
            random_schedule(3, 5, np.random.default_rng(0))

    def test_policy_ignores_importance(self):
        cfg = SchedulerConfig(workers=3, candidates=6)
        picked = RandomPolicy().select(np.arange(20), callbacks_with(lambda j, k: 1.0), cfg, np.random.default_rng(1))
        assert len(set(picked)) == 3

    def test_roughly_uniform(self):
        rng = np.random.default_rng(2)
        counts = np.zeros(5)
        for _ in range(5000):
            counts[uniform_candidates(np.arange(5), 1, rng)] += 1
        assert counts / 5000 == pytest.approx(np.full(5, 0.2), abs=0.03)


class TestStatic:
    coupling = np.eye(8) + 0.5 * (np.abs(np.subtract.outer(np.arange(8), np.arange(8))) == 1)

    def dep(self, j, k):
        return self.coupling[j, k]

    def test_schedule_is_compatible(self):
        for seed in range(20):
            picked = static_block_schedule(8, 3, np.random.default_rng(seed), self.dep, 0.1)
            assert 1 <= len(picked) <= 3
            assert all(abs(picked[a] - picked[b]) != 1 for a in range(len(picked)) for b in range(a))

    def test_policy_filters_in_draw_order(self):
        cfg = SchedulerConfig(workers=2, candidates=4, rho=0.1)
        policy = StaticBlockPolicy()
        assert policy.enforces_rho and not policy.uses_importance
        picked = policy.finalize(np.array([3, 4, 6, 0]), callbacks_with(self.dep), cfg)
        assert picked == [3, 6]

    def test_policy_select(self):
        cfg = SchedulerConfig(workers=3, candidates=6, rho=0.1)
        picked = StaticBlockPolicy().select(np.arange(8), callbacks_with(self.dep), cfg, np.random.default_rng(3))
        assert len(picked) <= 3

    def test_default_pool_is_the_sap_candidate_count(self):
        seen = set()

        def conflicting(j, k):
            seen.update((j, k))
            return 1.0

        picked = static_block_schedule(200, 4, np.random.default_rng(0), conflicting, 0.1)
        assert len(picked) == 1
        assert len(seen) == SchedulerConfig().candidates
        seen.clear()
        static_block_schedule(200, 4, np.random.default_rng(0), conflicting, 0.1, candidates=10)
        assert len(seen) == 10

    def test_selection_is_uniform(self):
        rng = np.random.default_rng(11)
        counts = np.zeros(20)
        for _ in range(10_000):
            counts[static_block_schedule(20, 3, rng, lambda j, k: 0.0, 0.1, candidates=6)] += 1
        assert counts.sum() == 30_000
        assert chisquare(counts).pvalue > 1e-3


def test_cyclic_sweeps_in_order():
    cfg = SchedulerConfig(workers=3, candidates=3)
    policy = CyclicPolicy()
    owned = np.array([2, 5, 7, 9, 11])
    rounds = [policy.select(owned, callbacks_with(lambda j, k: 0.0), cfg, None) for _ in range(3)]
    assert rounds == [[2, 5, 7], [9, 11, 2], [5, 7, 9]]
