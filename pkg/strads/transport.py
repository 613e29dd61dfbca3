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
"""Scheduler-to-worker message contract and the in-process worker pool that carries it.

Messages are plain frozen values with no shared references, so a socket transport can replace
`WorkerPool` without touching schedulers or applications.
"""

from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from logging import getLogger
from typing import Any, TypeVar

from .core import VariableBlock
from .utils import WorkerFailureError


__all__ = ["DispatchMsg", "UpdateMsg", "WorkerPool"]


logger = getLogger(__name__)

ResultT = TypeVar("ResultT")


@dataclass(frozen=True)
class DispatchMsg:
    """
    One block sent to one worker.

    Args:
        round_id (`int`): Global round counter.
        thread_id (`int`): Scheduler thread that issued the round.
        block ([`VariableBlock`]): Variables to update.
        snapshot_version (`int`): Version of the read snapshot the worker must compute against.
    """

    round_id: int
    thread_id: int
    block: VariableBlock
    snapshot_version: int

    def dict(self):
        return {
            "round_id": self.round_id,
            "thread_id": self.thread_id,
            "block": self.block.dict(),
            "snapshot_version": self.snapshot_version,
        }


@dataclass(frozen=True)
class UpdateMsg:
    """
    New value of one dispatched variable.

    Args:
        round_id (`int`): Round of the originating dispatch.
        variable_id (`int`): Updated variable.
        new_value (`float`): Value computed against the round snapshot.
        delta (`float`): |new_value - old_value|.
    """

    round_id: int
    variable_id: int
    new_value: float
    delta: float

    def dict(self):
        return {
            "round_id": self.round_id,
            "variable_id": self.variable_id,
            "new_value": self.new_value,
            "delta": self.delta,
        }


def check_updates(dispatches: Sequence[DispatchMsg], updates: Sequence[UpdateMsg]) -> None:
    """Every update answers an outstanding dispatch, exactly one per dispatched variable."""
    expected = {(d.round_id, v) for d in dispatches for v in d.block.variable_ids}
    received = [(u.round_id, u.variable_id) for u in updates]
    if len(received) != len(set(received)) or set(received) != expected:
        missing = sorted(v for _, v in expected - set(received))
        unexpected = sorted(v for _, v in set(received) - expected)
        raise WorkerFailureError(
            f"update messages do not match dispatches (missing {missing[:5]}, unexpected {unexpected[:5]})"
        )


class WorkerPool:
    """
    P workers executing kernels on dispatched blocks.

    Results are returned in dispatch order whatever the completion order, so application of updates is
    deterministic.

    Args:
        workers (`int`): Number of workers P.
    """

    def __init__(self, workers: int):
        if workers < 1:
            raise ValueError(f"a worker pool needs at least one worker, got {workers}")
        self.workers = workers
        self._executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="strads-worker")

    def __enter__(self) -> "WorkerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    def shutdown(self) -> None:
        self._executor.shutdown(wait=True)

    def run(self, dispatches: Sequence[Any], kernel: Callable[[Any], ResultT]) -> list[ResultT]:
        """Runs `kernel` on every dispatch and waits for all of them (the round barrier).

        Raises:
            WorkerFailureError: If any kernel raised; the other kernels are still awaited first.
        """
        if len(dispatches) > self.workers:
            raise ValueError(f"{len(dispatches)} dispatches for {self.workers} workers")
        if len(dispatches) == 1:
            try:
                return [kernel(dispatches[0])]
            except Exception as e:
                raise WorkerFailureError(
                    f"worker failed on {_describe(dispatches[0])}: {type(e).__name__}: {e}"
                ) from e
        results: dict[int, ResultT] = {}
        failures: list[tuple[int, BaseException]] = []
        futures = {self._executor.submit(kernel, dispatch): index for index, dispatch in enumerate(dispatches)}
        for future in as_completed(futures):
            index = futures[future]
            try:
                results[index] = future.result()
            except Exception as e:
                failures.append((index, e))
        if failures:
            index, error = min(failures, key=lambda failure: failure[0])
            raise WorkerFailureError(
                f"worker failed on {_describe(dispatches[index])}: {type(error).__name__}: {error}"
            ) from error
        return [results[index] for index in range(len(dispatches))]


def _describe(dispatch: Any) -> str:
    if isinstance(dispatch, DispatchMsg):
        return f"round {dispatch.round_id}, block {dispatch.block.variable_ids[:4]}"
    return repr(dispatch)[:80]
