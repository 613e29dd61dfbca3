#!/usr/bin/env python
# coding=utf-8

# Copyright 2026 The STRADS contributors. All rights reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
import threading
from collections.abc import Callable
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from logging import getLogger

import numpy as np

from .config import SchedulerConfig
from .core import ScheduleRound
from .engine import (
    ImportanceDist,
    ModelApplication,
    RhoAudit,
    RoundReport,
    RunClock,
    SchedulerCallbacks,
    SchedulingPolicy,
    execute_round,
    plan_round,
    record_round,
    run_callbacks,
    scheduler_rng,
)
from .monitoring import LogLevel, Monitor, RunLogger
from .trace import RunTrace
from .transport import WorkerPool
from .utils import StradsConfigError, StradsError, StradsNumericalError


__all__ = ["SchedulerThread", "DependencyAudit", "StradsRuntime", "partition_variables", "round_robin_run"]


logger = getLogger(__name__)


def partition_variables(n_variables: int, n_threads: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Splits a seeded permutation of 0..n_variables-1 into `n_threads` contiguous near-equal chunks.

    Each returned set is sorted; sizes differ by at most one.
    """
    if n_threads < 1:
        raise StradsConfigError(f"need at least one scheduler thread, got {n_threads}")
    if n_threads > n_variables:
        raise StradsConfigError(f"cannot partition {n_variables} variables over {n_threads} scheduler threads")
    permutation = rng.permutation(n_variables)
    return [np.sort(chunk) for chunk in np.array_split(permutation, n_threads)]


class DependencyAudit:
    """Counts dependency evaluations, and those touching a variable outside the calling thread's partition."""

    def __init__(self, dependency_fn: Callable[[int, int], float], owner_of: np.ndarray):
        self._dependency_fn = dependency_fn
        self._owner_of = owner_of
        self._lock = threading.Lock()
        self.calls = 0
        self.cross_thread_calls = 0

    def for_thread(self, thread_id: int) -> Callable[[int, int], float]:
        def audited(j: int, k: int) -> float:
            with self._lock:
                self.calls += 1
                if self._owner_of[j] != thread_id or self._owner_of[k] != thread_id:
                    self.cross_thread_calls += 1
            return self._dependency_fn(j, k)

        return audited


@dataclass
class SchedulerThread:
    """
    One scheduler unit: its partition, its selection policy and its random stream.

    Args:
        thread_id (`int`): Index in [0, S).
        owned (`np.ndarray`): Sorted ids of the variables this thread schedules.
        policy ([`SchedulingPolicy`]): Private policy instance, so policy state is never shared.
        rng (`np.random.Generator`): Stream used for candidate draws.
        callbacks ([`SchedulerCallbacks`]): Application callbacks with an audited dependency function.
    """

    thread_id: int
    owned: np.ndarray
    policy: SchedulingPolicy
    rng: np.random.Generator
    callbacks: SchedulerCallbacks
    pending: Future | None = None
    pending_during: frozenset = frozenset()
    rounds_issued: int = 0
    owned_set: frozenset = field(init=False)

    def __post_init__(self):
        self.owned_set = frozenset(int(v) for v in self.owned)

    def local_importance(self) -> ImportanceDist:
        return ImportanceDist(self.owned, self.callbacks.sampling_fn(self.owned))


class StradsRuntime:
    """
    S scheduler threads with disjoint variable partitions, taking turns dispatching to one worker pool.

    Global round r is issued by thread r mod S. While a round executes, the next thread draws its
    candidate set in the background against the importance weights of the last committed state;
    its dependency filter still runs at dispatch time against current weights.

    Args:
        app ([`ModelApplication`]): Application whose variables are scheduled.
        policy_factory (`Callable[[], SchedulingPolicy]`): Builds one policy per thread, usually a policy class.
        cfg ([`SchedulerConfig`]): Run configuration; `scheduler_threads` gives S.
        logger ([`RunLogger`], *optional*): Console logger.
        round_callbacks (`list[Callable]`, *optional*): Called with every [`RoundReport`].
    """

    def __init__(
        self,
        app: ModelApplication,
        policy_factory: Callable[[], SchedulingPolicy],
        cfg: SchedulerConfig,
        logger: RunLogger | None = None,
        round_callbacks: list[Callable] | None = None,
    ):
        self.app = app
        self.cfg = cfg.validate()
        self.logger = logger if logger is not None else RunLogger(level=LogLevel.ERROR)
        partitions = partition_variables(app.n_variables, cfg.scheduler_threads, np.random.default_rng(cfg.seed))
        owner_of = np.empty(app.n_variables, dtype=np.int64)
        for thread_id, owned in enumerate(partitions):
            owner_of[owned] = thread_id
        base = app.callbacks()
        self.dependency_audit = DependencyAudit(base.dependency_fn, owner_of)
        self.threads = [
            SchedulerThread(
                thread_id=thread_id,
                owned=owned,
                policy=policy_factory(),
                rng=scheduler_rng(cfg.seed, thread_id),
                callbacks=SchedulerCallbacks(
                    sampling_fn=base.sampling_fn,
                    dependency_fn=self.dependency_audit.for_thread(thread_id),
                    progress_fn=base.progress_fn,
                ),
            )
            for thread_id, owned in enumerate(partitions)
        ]
        self.scheduler_name = self.threads[0].policy.name
        self.rho_audit = RhoAudit()
        self.monitor = Monitor(self.logger)
        self.round_callbacks = round_callbacks if round_callbacks is not None else []
        self.round_callbacks.append(self.monitor.update_metrics)
        self.snapshot_version = 0

    @property
    def n_threads(self) -> int:
        return len(self.threads)

    def _propose(self, thread: SchedulerThread, weights: np.ndarray | None) -> np.ndarray:
        return thread.policy.propose(thread.owned, weights, self.cfg, thread.rng)

    def _current_weights(self, thread: SchedulerThread) -> np.ndarray | None:
        if not thread.policy.uses_importance:
            return None
        return thread.local_importance().validate().weights.copy()

    def _check_ownership(self, schedule: ScheduleRound, thread: SchedulerThread) -> None:
        foreign = [v for v in schedule.variable_ids if v not in thread.owned_set]
        if foreign:
            raise StradsNumericalError(
                f"thread {thread.thread_id} dispatched variables it does not own: {foreign[:5]}"
            )

    def _collect_pending(self, thread: SchedulerThread) -> np.ndarray:
        candidates = thread.pending.result()
        overlap = thread.pending_during.intersection(int(v) for v in candidates)
        thread.pending, thread.pending_during = None, frozenset()
        if overlap:
            raise StradsNumericalError(f"variables {sorted(overlap)[:5]} were in two in-flight rounds")
        return candidates

    def run_round(
        self, round_id: int, workers: WorkerPool, precompute: ThreadPoolExecutor | None = None
    ) -> RoundReport:
        """Serves global round `round_id` from thread `round_id mod S`."""
        thread = self.threads[round_id % self.n_threads]
        if thread.pending is not None:
            candidates = self._collect_pending(thread)
        else:
            candidates = self._propose(thread, self._current_weights(thread))
        selected = thread.policy.finalize(candidates, thread.callbacks, self.cfg)
        if self.cfg.check_rho_safety and thread.policy.enforces_rho:
            self.rho_audit.check(selected, thread.callbacks.dependency_fn, self.cfg.rho)
        schedule = plan_round(self.app, selected, round_id, thread.thread_id, self.cfg.workers)
        self._check_ownership(schedule, thread)

        following = self.threads[(round_id + 1) % self.n_threads]
        if precompute is not None and following is not thread and following.pending is None:
            following.pending = precompute.submit(self._propose, following, self._current_weights(following))
            following.pending_during = frozenset(schedule.variable_ids)

        report = execute_round(self.app, thread.callbacks, thread.owned, schedule, workers, self.snapshot_version)
        self.snapshot_version += 1
        thread.rounds_issued += 1
        run_callbacks(self.round_callbacks, report, runtime=self)
        return report

    def run(
        self,
        workers: WorkerPool,
        stop: Callable[[RoundReport, RunTrace], bool] | None = None,
        max_iter: int | None = None,
    ) -> RunTrace:
        """Round-robin rounds until `stop` holds or the round budget is spent.

        Errors carry the records of the rounds committed before the failure in `partial_trace`.
        """
        max_iter = max_iter or self.cfg.max_iter
        self.monitor.reset()
        trace = RunTrace(self.scheduler_name)
        clock = RunClock(self.cfg.clock)
        self.logger.log_run(
            f"{self.app.name}: {self.app.n_variables} variables, S={self.n_threads}, "
            f"P={self.cfg.workers}, P'={self.cfg.candidates}",
            subtitle=f"scheduler={self.scheduler_name} seed={self.cfg.seed}",
        )
        precompute = (
            ThreadPoolExecutor(max_workers=1, thread_name_prefix="strads-scheduler") if self.n_threads > 1 else None
        )
        try:
            for round_id in range(max_iter):
                report = self.run_round(round_id, workers, precompute)
                trace.append(record_round(report, self.app, self.scheduler_name, clock.advance(report)))
                if stop is not None and stop(report, trace):
                    break
        except StradsError as e:
            e.partial_trace = trace.records
            raise
        finally:
            if precompute is not None:
                precompute.shutdown(wait=True, cancel_futures=True)
            for thread in self.threads:
                thread.pending = None
        self.logger.log(
            f"{len(trace)} rounds, {self.dependency_audit.calls} dependency evaluations "
            f"({self.dependency_audit.cross_thread_calls} across threads)",
            level=LogLevel.INFO,
        )
        return trace


def round_robin_run(
    app: ModelApplication,
    policy_factory: Callable[[], SchedulingPolicy],
    cfg: SchedulerConfig,
    workers: WorkerPool,
    stop: Callable[[RoundReport, RunTrace], bool] | None = None,
    logger: RunLogger | None = None,
) -> RunTrace:
    """Builds a [`StradsRuntime`] for `app` and runs it to completion."""
    return StradsRuntime(app, policy_factory, cfg, logger=logger).run(workers, stop=stop)
