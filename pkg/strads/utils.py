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
import hashlib
import math
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np


if TYPE_CHECKING:
    from strads.monitoring import RunLogger


__all__ = [
    "StradsError",
    "StradsConfigError",
    "EnumerationBoundError",
    "StradsIOError",
    "DataFormatError",
    "DegenerateDistributionError",
    "StradsNumericalError",
    "WorkerFailureError",
    "PropertyCheckError",
]


class StradsError(Exception):
    """Base class for scheduler, runtime and application errors.

    Args:
        message (`str`): Human readable description.
        logger ([`RunLogger`], *optional*): When given, the error is logged as soon as it is raised.
    """

    exit_code: int = 1

    def __init__(self, message: str, logger: "RunLogger | None" = None):
        super().__init__(message)
        self.message = message
        # records of the rounds completed before the failure, attached by the run loop
        self.partial_trace: list | None = None
        if logger is not None:
            logger.log_error(message)

    def dict(self) -> dict[str, str]:
        return {"type": self.__class__.__name__, "message": str(self.message)}


class StradsConfigError(StradsError):
    """Invalid configuration, run specification or command-line usage"""

    exit_code = 2


class EnumerationBoundError(StradsConfigError):
    """Exhaustive enumeration requested on an instance that is too large"""

    pass


class StradsIOError(StradsError):
    """A path could not be read or written"""

    exit_code = 3


class DataFormatError(StradsIOError):
    """Input content is malformed; the message names the offending location"""

    pass


class StradsNumericalError(StradsError):
    """Non-finite values, residual drift or a violated descent guarantee"""

    exit_code = 4


class DegenerateDistributionError(StradsNumericalError):
    """An importance distribution has no positive mass"""

    pass


class WorkerFailureError(StradsNumericalError):
    """A worker kernel raised while a round was in flight; the round is rolled back before this is raised"""

    pass


class PropertyCheckError(StradsError):
    """A numerical property of the theory oracle did not hold"""

    exit_code = 5


def make_json_serializable(obj: Any) -> Any:
    """Recursive function to turn configs, numpy scalars and arrays into JSON-friendly values"""
    if obj is None:
        return None
    elif isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    elif isinstance(obj, (int, np.integer)):
        return int(obj)
    elif isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else str(value)
    elif isinstance(obj, str):
        return obj
    elif isinstance(obj, Path):
        return str(obj)
    elif isinstance(obj, np.ndarray):
        return [make_json_serializable(item) for item in obj.tolist()]
    elif isinstance(obj, (list, tuple)):
        return [make_json_serializable(item) for item in obj]
    elif isinstance(obj, dict):
        return {str(k): make_json_serializable(v) for k, v in obj.items()}
    elif hasattr(obj, "dict"):
        return make_json_serializable(obj.dict())
    else:
        return str(obj)


def git_blob_hash(path: str | Path) -> str:
    """Content hash of a file using git's blob framing, so it matches `git hash-object`."""
    try:
        content = Path(path).read_bytes()
    except OSError as e:
        raise StradsIOError(f"cannot read {path}: {e}")
    header = f"blob {len(content)}\0".encode()
    return hashlib.sha1(header + content).hexdigest()


def parse_seed_range(text: str) -> list[int]:
    """Parses `"1..20"`, `"3"` or `"1,4,9"` into a list of seeds."""
    seeds: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                lo, hi = part.split("..", 1)
                start, stop = int(lo), int(hi)
                if stop < start:
                    raise ValueError(part)
                seeds.extend(range(start, stop + 1))
            elif part:
                seeds.append(int(part))
    except ValueError:
        raise StradsConfigError(f"invalid seed list '{text}'")
    if not seeds:
        raise StradsConfigError(f"invalid seed list '{text}'")
    return seeds
