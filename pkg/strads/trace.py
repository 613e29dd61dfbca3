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
from __future__ import annotations

from dataclasses import asdict, dataclass

from .monitoring import LogLevel, RunLogger


__all__ = ["TraceRecord", "RunTrace", "TRACE_COLUMNS"]


TRACE_COLUMNS = ["iter", "wallclock_s", "objective", "active_vars", "updates_applied", "scheduler"]


@dataclass
class TraceRecord:
    """One recorded round (Lasso) or epoch (MF).

    `critical_path_cost` is the maximum per-worker workload summed over the barriers of the
    record; it is kept in memory and in comparison output but is not a trace-file column.
    """

    iter: int
    wallclock_s: float
    objective: float
    active_vars: int
    updates_applied: int
    scheduler: str
    critical_path_cost: float = 0.0

    def dict(self):
        return asdict(self)

    def row(self) -> dict:
        return {column: getattr(self, column) for column in TRACE_COLUMNS}


class RunTrace:
    def __init__(self, scheduler: str):
        self.scheduler = scheduler
        self.records: list[TraceRecord] = []

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_objective(self) -> float | None:
        return self.records[-1].objective if self.records else None

    def objectives(self) -> list[float]:
        return [record.objective for record in self.records]

    def get_full_records(self) -> list[dict]:
        return [record.dict() for record in self.records]

    def replay(self, logger: RunLogger, every: int = 1):
        """Prints the recorded rounds.

        Args:
            logger (RunLogger): The logger to print replay logs to.
            every (int, optional): Only print every `every`-th record. Defaults to 1.
        """
        logger.log_rule(f"Trace replay: {self.scheduler}", level=LogLevel.ERROR)
        rows = [
            [r.iter, f"{r.wallclock_s:.4f}", f"{r.objective:.10g}", r.active_vars, r.updates_applied]
            for i, r in enumerate(self.records)
            if i % every == 0 or i == len(self.records) - 1
        ]
        columns = ["iter", "wallclock_s", "objective", "active", "updates"]
        logger.log_table(self.scheduler, columns, rows, LogLevel.ERROR)
