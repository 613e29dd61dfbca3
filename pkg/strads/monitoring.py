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
from dataclasses import dataclass
from enum import IntEnum
from typing import TYPE_CHECKING, Any

from rich import box
from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.rule import Rule
from rich.table import Table
from rich.text import Text


if TYPE_CHECKING:
    from strads.engine import RoundReport


__all__ = ["RunLogger", "LogLevel", "Monitor", "Timing"]


@dataclass
class Timing:
    """
    Contains the timing information for a given round or run.
    """

    start_time: float
    end_time: float | None = None

    @property
    def duration(self):
        return None if self.end_time is None else self.end_time - self.start_time

    def dict(self):
        return {
            "start_time": self.start_time,
            "end_time": self.end_time,
            "duration": self.duration,
        }

    def __repr__(self) -> str:
        return f"Timing(start_time={self.start_time}, end_time={self.end_time}, duration={self.duration})"


class LogLevel(IntEnum):
    OFF = -1  # No output
    ERROR = 0  # Only errors
    INFO = 1  # Normal output (default)
    DEBUG = 2  # Per-round output


ACCENT_HEX = "#2aa198"


class RunLogger:
    """Console logger for runs; writes to stderr so that stdout stays machine-readable."""

    def __init__(self, level: LogLevel = LogLevel.INFO, console: Console | None = None):
        self.level = level
        if console is None:
            self.console = Console(stderr=True)
        else:
            self.console = console

    def log(self, *args, level: int | str | LogLevel = LogLevel.INFO, **kwargs) -> None:
        """Logs a message to the console.

        Args:
            level (LogLevel, optional): Defaults to LogLevel.INFO.
        """
        if isinstance(level, str):
            level = LogLevel[level.upper()]
        if level <= self.level:
            self.console.print(*args, **kwargs)

    def log_error(self, error_message: str) -> None:
        self.log(escape(error_message), style="bold red", level=LogLevel.ERROR)

    def log_rule(self, title: str, level: int = LogLevel.INFO) -> None:
        self.log(
            Rule(
                "[bold]" + escape(title),
                characters="━",
                style=ACCENT_HEX,
            ),
            level=level,
        )

    def log_run(self, content: str, subtitle: str, title: str | None = None, level: LogLevel = LogLevel.INFO) -> None:
        self.log(
            Panel(
                f"\n[bold]{escape(content)}\n",
                title="[bold]New run" + (f" - {escape(title)}" if title else ""),
                subtitle=escape(subtitle),
                border_style=ACCENT_HEX,
                subtitle_align="left",
            ),
            level=level,
        )

    def log_table(
        self, title: str, columns: list[str], rows: list[list[Any]], level: LogLevel = LogLevel.INFO
    ) -> None:
        table = Table(title=title, show_header=True, header_style="bold", box=box.SIMPLE_HEAD)
        for column in columns:
            table.add_column(column)
        for row in rows:
            table.add_row(*[escape(str(cell)) for cell in row])
        self.log(table, level=level)


class Monitor:
    """Round callback accumulating durations, applied updates and critical-path cost."""

    def __init__(self, logger: RunLogger):
        self.logger = logger
        self.round_durations: list[float] = []
        self.total_updates = 0
        self.total_critical_path = 0.0

    def reset(self):
        self.round_durations = []
        self.total_updates = 0
        self.total_critical_path = 0.0

    def update_metrics(self, report: "RoundReport"):
        """Update the metrics of the monitor.

        Args:
            report ([`RoundReport`]): Report of the round that just completed.
        """
        duration = report.timing.duration or 0.0
        self.round_durations.append(duration)
        self.total_updates += len(report.updates)
        self.total_critical_path += report.critical_path_cost
        console_outputs = (
            f"[Round {report.round_id} | thread {report.issuing_thread} | {duration:.4f}s"
            f" | updates {len(report.updates)} | objective {report.objective:.10g}]"
        )
        self.logger.log(Text(console_outputs, style="dim"), level=LogLevel.DEBUG)

    def summary(self) -> dict[str, float]:
        return {
            "rounds": len(self.round_durations),
            "wallclock_s": float(sum(self.round_durations)),
            "updates": self.total_updates,
            "critical_path_cost": self.total_critical_path,
        }
