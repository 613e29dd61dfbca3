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
import heapq
import inspect
import math
import time
from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from logging import getLogger
from typing import Any

import numpy as np

from .config import SchedulerConfig
from .core import ScheduleRound, VariableBlock
from .monitoring import LogLevel, Monitor, RunLogger, Timing
from .trace import RunTrace, TraceRecord
from .transport import DispatchMsg, UpdateMsg, WorkerPool, check_updates
from .utils import DegenerateDistributionError, StradsError, StradsNumericalError


__all__ = [
    "ImportanceDist",
    "SchedulerCallbacks",
    "ModelApplication",
    "SchedulingPolicy",
    "SapPolicy",
    "RhoAudit",
    "RoundReport",
    "SapEngine",
    "RunClock",
    "execute_round",
    "plan_round",
    "record_round",
    "sample_candidates",
    "order_by_importance",
    "filter_dependent",
    "merge_blocks",
    "update_progress",
    "scheduler_rng",
]


logger = getLogger(__name__)

RHO_SLACK = 1e-12


def scheduler_rng(seed: int, thread_id: int) -> np.random.Generator:
    """Random stream of scheduler thread `thread_id`; a single-thread engine uses thread 0."""
    return np.random.default_rng([int(seed), int(thread_id)])


@dataclass
class ImportanceDist:
    """
    Unnormalized importance weights p(j) over a set of variables.

    Args:
        variable_ids (`np.ndarray`): Variables the distribution ranges over.
        weights (`np.ndarray`): Nonnegative weight of each variable, same order.
    """

    variable_ids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.variable_ids = np.asarray(self.variable_ids, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.variable_ids.shape != self.weights.shape:
            raise ValueError("one weight per variable is required")

    def validate(self) -> "ImportanceDist":
        if not np.all(np.isfinite(self.weights)):
            raise StradsNumericalError("importance weights must be finite")
        if np.any(self.weights < 0):
            bad = int(self.variable_ids[np.argmax(self.weights < 0)])
            raise StradsNumericalError(f"negative importance weight for variable {bad}")
        if not self.weights.sum() > 0:
            raise DegenerateDistributionError("degenerate importance distribution")
        return self

    @classmethod
    def uniform(cls, variable_ids) -> "ImportanceDist":
        ids = np.asarray(variable_ids, dtype=np.int64)
        return cls(ids, np.ones(ids.size))


@dataclass
class SchedulerCallbacks:
    """
    Application hooks consulted by the scheduler.

    Args:
        sampling_fn (`Callable[[np.ndarray], np.ndarray]`): Nonnegative importance weight of each given variable id.
        dependency_fn (`Callable[[int, int], float]`): Symmetric coupling d(j, k); never called with j == k.
        progress_fn (`Callable[[list[UpdateMsg]], None]`): Folds the updates of the last round into the
            state behind `sampling_fn` and `dependency_fn`.
    """

    sampling_fn: Callable[[np.ndarray], np.ndarray]
    dependency_fn: Callable[[int, int], float]
    progress_fn: Callable[[list[UpdateMsg]], None]


class ModelApplication(ABC):
    """
    Contract between the scheduler and a model-parallel application.

    Workers call `update_kernel` against the read-only snapshot of the round; the engine applies the
    returned updates serially at the barrier.
    """

    name: str = "application"

    @property
    @abstractmethod
    def n_variables(self) -> int: ...

    @abstractmethod
    def callbacks(self) -> SchedulerCallbacks: ...

    @abstractmethod
    def snapshot(self) -> Any:
        """Frozen view of the state that workers read during one round."""

    @abstractmethod
    def update_kernel(self, dispatch: DispatchMsg, snapshot: Any) -> list[UpdateMsg]: ...

    @abstractmethod
    def apply_updates(self, updates: list[UpdateMsg]) -> None: ...

    @abstractmethod
    def objective(self) -> float: ...

    def workload(self, variable_ids: np.ndarray) -> np.ndarray:
        """Cost estimate of updating each variable; one unit by default."""
        return np.ones(len(variable_ids))

    def active_variables(self) -> int:
        return self.n_variables

    @abstractmethod
    def checkpoint(self) -> Any: ...

    @abstractmethod
    def restore(self, checkpoint: Any) -> None: ...

    def after_round(self, round_id: int) -> None:
        """Hook run after a round has been committed."""


@dataclass
class RhoAudit:
    """Counts same-round pairs checked against the ρ bound, and violations among them."""

    pairs_checked: int = 0
    violations: int = 0

    def check(self, selected: Sequence[int], dependency_fn: Callable[[int, int], float], rho: float) -> None:
        for a in range(len(selected)):
            for b in range(a + 1, len(selected)):
                self.pairs_checked += 1
                if abs(dependency_fn(selected[a], selected[b])) > rho + RHO_SLACK:
                    self.violations += 1
                    raise StradsNumericalError(
                        f"variables {selected[a]} and {selected[b]} dispatched together exceed rho={rho}"
                    )


def sample_candidates(dist: ImportanceDist, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draws up to `count` distinct variables, each draw proportional to weight among those not yet drawn.

    Uses exponential keys log(u) / w: sorting by key reproduces sequential weighted sampling without
    replacement. Returns ids in draw order; all positive-weight ids when `count` exceeds their number.

    Raises:
        DegenerateDistributionError: If no weight is positive.
    """
    dist.validate()
    positive = dist.weights > 0
    ids = dist.variable_ids[positive]
    weights = dist.weights[positive]
    take = min(int(count), ids.size)
    keys = np.log1p(-rng.random(ids.size)) / weights
    order = np.argsort(-keys, kind="stable")[:take]
    return ids[order]


def order_by_importance(candidates: np.ndarray, weights: np.ndarray) -> list[int]:
    """Descending weight, ties broken by the lower variable id."""
    candidates = np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((candidates, -np.asarray(weights, dtype=np.float64)))
    return [int(v) for v in candidates[order]]


def filter_dependent(
    candidates: Sequence[int], dep: Callable[[int, int], float], rho: float, cap: int
) -> list[int]:
    """Greedy pass: keep a candidate iff |dep| <= rho against everything kept so far, stopping at `cap`."""
    accepted: list[int] = []
    for candidate in candidates:
        if len(accepted) >= cap:
            break
        if all(abs(dep(candidate, kept)) <= rho for kept in accepted):
            accepted.append(int(candidate))
    return accepted


def merge_blocks(blocks: Sequence[VariableBlock], target: int) -> list[VariableBlock]:
    """Longest-processing-time merge of `blocks` into min(target, len(blocks)) bins.

    Blocks are taken by descending workload and each goes to the currently least-loaded bin, the lowest
    bin id winning ties. Every output block is the union of its bin.
    """
    if not blocks:
        raise ValueError("merge_blocks needs at least one block")
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")
    n_bins = min(int(target), len(blocks))
    order = sorted(range(len(blocks)), key=lambda i: (-blocks[i].workload, i))
    heap = [(0.0, b) for b in range(n_bins)]
    members: list[list[VariableBlock]] = [[] for _ in range(n_bins)]
    for index in order:
        load, b = heapq.heappop(heap)
        members[b].append(blocks[index])
        heapq.heappush(heap, (load + blocks[index].workload, b))
    return [
        VariableBlock(
            variable_ids=tuple(v for block in bin_blocks for v in block.variable_ids),
            workload=math.fsum(block.workload for block in bin_blocks),
            owner_thread=bin_blocks[0].owner_thread,
        )
        for bin_blocks in members
    ]


def update_progress(callbacks: SchedulerCallbacks, updates: list[UpdateMsg], variable_ids: np.ndarray) -> None:
    """Step 4: hands the applied updates to `progress_fn`, then re-validates the importance weights.

    Raises:
        StradsNumericalError: If `progress_fn` left a negative or non-finite weight behind.
    """
    callbacks.progress_fn(updates)
    ImportanceDist(variable_ids, callbacks.sampling_fn(variable_ids)).validate()


class SchedulingPolicy(ABC):
    """
    Steps 1 and 2 of a round: which variables a scheduler thread dispatches next.

    Step 1 (`propose`) only sees a copy of the importance weights, so it can run ahead of the round
    that is executing; step 2 (`finalize`) runs at dispatch time against live callbacks.
    """

    name: str
    uses_importance: bool = False
    enforces_rho: bool = False

    @abstractmethod
    def propose(
        self,
        owned: np.ndarray,
        weights: np.ndarray | None,
        cfg: SchedulerConfig,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """Candidate ids drawn from `owned`; `weights` is None unless the policy uses importance."""

    def finalize(self, candidates: np.ndarray, callbacks: SchedulerCallbacks, cfg: SchedulerConfig) -> list[int]:
        """Keeps the first `cfg.workers` candidates."""
        return [int(v) for v in candidates[: cfg.workers]]

    def select(
        self,
        owned: np.ndarray,
        callbacks: SchedulerCallbacks,
        cfg: SchedulerConfig,
        rng: np.random.Generator,
    ) -> list[int]:
        """Returns at most `cfg.workers` variables of `owned` to update in the next round."""
        weights = callbacks.sampling_fn(owned) if self.uses_importance else None
        return self.finalize(self.propose(owned, weights, cfg, rng), callbacks, cfg)


class SapPolicy(SchedulingPolicy):
    """Importance-weighted candidate draw followed by the greedy dependency filter."""

    name = "sap"
    uses_importance = True
    enforces_rho = True

    def propose(self, owned, weights, cfg, rng):
        return sample_candidates(ImportanceDist(owned, weights), cfg.candidates, rng)

    def finalize(self, candidates, callbacks, cfg):
        ordered = order_by_importance(candidates, callbacks.sampling_fn(candidates))
        return filter_dependent(ordered, callbacks.dependency_fn, cfg.rho, cfg.workers)


@dataclass
class RoundReport:
    """Outcome of one committed round."""

    round_id: int
    issuing_thread: int
    schedule: ScheduleRound
    updates: list[UpdateMsg]
    objective: float
    timing: Timing
    critical_path_cost: float = 0.0

    @property
    def deltas(self) -> dict[int, float]:
        return {u.variable_id: u.delta for u in self.updates}


@dataclass
class RunClock:
    """Trace clock: seconds since the run started, or cumulative critical-path cost when simulated."""

    mode: str
    start: float = field(default_factory=time.perf_counter)
    simulated: float = 0.0

    def advance(self, report: RoundReport) -> float:
        self.simulated += report.critical_path_cost
        if self.mode == "simulated":
            return self.simulated
        return time.perf_counter() - self.start


def plan_round(
    app: ModelApplication, selected: Sequence[int], round_id: int, thread_id: int, workers: int
) -> ScheduleRound:
    """Step 3: singleton blocks weighted by workload, merged into at most `workers` load-balanced blocks."""
    blocks: list[VariableBlock] = []
    if selected:
        ids = np.asarray(selected, dtype=np.int64)
        singletons = [VariableBlock((int(v),), float(w), thread_id) for v, w in zip(ids, app.workload(ids))]
        blocks = merge_blocks(singletons, workers)
    schedule = ScheduleRound(round_id=round_id, blocks=blocks, issuing_thread=thread_id)
    schedule.check(workers)
    return schedule


def execute_round(
    app: ModelApplication,
    callbacks: SchedulerCallbacks,
    owned: np.ndarray,
    schedule: ScheduleRound,
    workers: WorkerPool,
    snapshot_version: int,
) -> RoundReport:
    """Dispatches a planned round, waits for every worker, then commits updates and runs step 4.

    The round is all-or-nothing: any failure restores the application state bitwise before the
    error propagates.
    """
    start = time.time()
    snapshot = app.snapshot()
    dispatches = [
        DispatchMsg(schedule.round_id, schedule.issuing_thread, block, snapshot_version) for block in schedule.blocks
    ]
    checkpoint = app.checkpoint()
    try:
        results = workers.run(dispatches, lambda dispatch: app.update_kernel(dispatch, snapshot))
        updates = sorted((u for result in results for u in result), key=lambda u: u.variable_id)
        check_updates(dispatches, updates)
        app.apply_updates(updates)
        update_progress(callbacks, updates, owned)
        objective = app.objective()
        if not math.isfinite(objective):
            raise StradsNumericalError(f"non-finite objective {objective} after round {schedule.round_id}")
        app.after_round(schedule.round_id)
    except BaseException:
        app.restore(checkpoint)
        raise
    return RoundReport(
        round_id=schedule.round_id,
        issuing_thread=schedule.issuing_thread,
        schedule=schedule,
        updates=updates,
        objective=objective,
        timing=Timing(start_time=start, end_time=time.time()),
        critical_path_cost=schedule.critical_path_cost(),
    )


def run_callbacks(round_callbacks: list[Callable], report: RoundReport, **kwargs) -> None:
    for callback in round_callbacks:
        if len(inspect.signature(callback).parameters) == 1:
            callback(report)
        else:
            callback(report, **kwargs)


class SapEngine:
    """
    The four-step SAP loop for a single scheduler over a set of owned variables.

    Args:
        app ([`ModelApplication`]): Application whose variables are scheduled.
        policy ([`SchedulingPolicy`]): Selection rule for steps 1 and 2.
        cfg ([`SchedulerConfig`]): Run configuration.
        owned (`np.ndarray`, *optional*): Variables this engine schedules; all variables by default.
        thread_id (`int`, default `0`): Scheduler thread id recorded on dispatched blocks.
        callbacks ([`SchedulerCallbacks`], *optional*): Defaults to `app.callbacks()`.
        logger ([`RunLogger`], *optional*): Console logger.
        round_callbacks (`list[Callable]`, *optional*): Called with every [`RoundReport`].
    """

    def __init__(
        self,
        app: ModelApplication,
        policy: SchedulingPolicy,
        cfg: SchedulerConfig,
        owned: np.ndarray | None = None,
        thread_id: int = 0,
        callbacks: SchedulerCallbacks | None = None,
        logger: RunLogger | None = None,
        round_callbacks: list[Callable] | None = None,
    ):
        self.app = app
        self.policy = policy
        self.cfg = cfg.validate()
        self.owned = np.arange(app.n_variables) if owned is None else np.sort(np.asarray(owned, dtype=np.int64))
        self.thread_id = thread_id
        self.callbacks = callbacks if callbacks is not None else app.callbacks()
        self.rng = scheduler_rng(cfg.seed, thread_id)
        self.logger = logger if logger is not None else RunLogger(level=LogLevel.ERROR)
        self.audit = RhoAudit()
        self.monitor = Monitor(self.logger)
        self.round_callbacks = round_callbacks if round_callbacks is not None else []
        self.round_callbacks.append(self.monitor.update_metrics)
        self.snapshot_version = 0
        self.next_round_id = 0

    def select(self) -> list[int]:
        """Steps 1 and 2 against the current state."""
        return self.policy.select(self.owned, self.callbacks, self.cfg, self.rng)

    def plan(self, round_id: int, selected: Sequence[int]) -> ScheduleRound:
        if self.cfg.check_rho_safety and self.policy.enforces_rho:
            self.audit.check(selected, self.callbacks.dependency_fn, self.cfg.rho)
        return plan_round(self.app, selected, round_id, self.thread_id, self.cfg.workers)

    def execute(self, schedule: ScheduleRound, workers: WorkerPool) -> RoundReport:
        report = execute_round(self.app, self.callbacks, self.owned, schedule, workers, self.snapshot_version)
        self.snapshot_version += 1
        run_callbacks(self.round_callbacks, report, engine=self)
        return report

    def run_round(self, workers: WorkerPool) -> RoundReport:
        """One full SAP iteration: select, plan, dispatch, commit, progress."""
        round_id = self.next_round_id
        self.next_round_id += 1
        return self.execute(self.plan(round_id, self.select()), workers)

    def run(
        self,
        workers: WorkerPool,
        stop: Callable[[RoundReport, RunTrace], bool] | None = None,
        max_iter: int | None = None,
    ) -> RunTrace:
        """Runs rounds until `stop` holds or the round budget is spent."""
        max_iter = max_iter or self.cfg.max_iter
        self.monitor.reset()
        trace = RunTrace(self.policy.name)
        clock = RunClock(self.cfg.clock)
        self.logger.log_run(
            f"{self.app.name}: {self.app.n_variables} variables, P={self.cfg.workers}, P'={self.cfg.candidates}",
            subtitle=f"scheduler={self.policy.name} seed={self.cfg.seed}",
        )
        try:
            for _ in range(max_iter):
                report = self.run_round(workers)
                trace.append(record_round(report, self.app, self.policy.name, clock.advance(report)))
                if stop is not None and stop(report, trace):
                    break
        except StradsError as e:
            e.partial_trace = trace.records
            raise
        return trace


def record_round(report: RoundReport, app: ModelApplication, scheduler: str, clock_value: float) -> TraceRecord:
    return TraceRecord(
        iter=report.round_id + 1,
        wallclock_s=clock_value,
        objective=report.objective,
        active_vars=app.active_variables(),
        updates_applied=len(report.updates),
        scheduler=scheduler,
        critical_path_cost=report.critical_path_cost,
    )
