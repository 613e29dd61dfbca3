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
from collections.abc import Callable

import numpy as np

from .config import SchedulerConfig
from .engine import SapPolicy, SchedulingPolicy, filter_dependent
from .utils import StradsConfigError


__all__ = [
    "RandomPolicy",
    "StaticBlockPolicy",
    "CyclicPolicy",
    "SCHEDULER_MAPPING",
    "random_schedule",
    "static_block_schedule",
    "uniform_candidates",
]


def uniform_candidates(owned: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` distinct ids of `owned`, uniformly at random, in draw order."""
    owned = np.asarray(owned, dtype=np.int64)
    return rng.choice(owned, size=min(int(count), owned.size), replace=False)


def random_schedule(J: int, P: int, rng: np.random.Generator) -> list[int]:
    """P variables uniformly without replacement, with no importance and no dependency check."""
    if P > J:
        raise StradsConfigError(f"cannot schedule {P} of {J} variables")
    return [int(v) for v in uniform_candidates(np.arange(J), P, rng)]


def static_block_schedule(
    J: int,
    P: int,
    rng: np.random.Generator,
    dep: Callable[[int, int], float],
    rho: float,
    candidates: int | None = None,
) -> list[int]:
    """Uniform draw of `candidates` variables, then the greedy ρ filter in draw order.

    P' defaults to the SAP candidate count, and is never below P.
    """
    if P > J:
        raise StradsConfigError(f"cannot schedule {P} of {J} variables")
    pool = SchedulerConfig.candidates if candidates is None else int(candidates)
    drawn = uniform_candidates(np.arange(J), max(pool, P), rng)
    return filter_dependent([int(v) for v in drawn], dep, rho, P)


class RandomPolicy(SchedulingPolicy):
    """Uniform choice of P variables; never looks at importance or dependencies."""

    name = "random"

    def propose(self, owned, weights, cfg, rng):
        return uniform_candidates(owned, cfg.workers, rng)


class StaticBlockPolicy(SchedulingPolicy):
    """Uniform draw of P' candidates filtered for ρ-compatibility; importance never enters."""

    name = "static"
    enforces_rho = True

    def propose(self, owned, weights, cfg, rng):
        return uniform_candidates(owned, cfg.candidates, rng)

    def finalize(self, candidates, callbacks, cfg):
        return filter_dependent([int(v) for v in candidates], callbacks.dependency_fn, cfg.rho, cfg.workers)


class CyclicPolicy(SchedulingPolicy):
    """Deterministic sweep over the owned variables, P at a time, in id order."""

    name = "cyclic"

    def __init__(self):
        self.cursor = 0

    def propose(self, owned, weights, cfg, rng):
        take = min(cfg.workers, owned.size)
        picked = owned[(self.cursor + np.arange(take)) % owned.size]
        self.cursor = (self.cursor + take) % owned.size
        return picked


SCHEDULER_MAPPING: dict[str, type[SchedulingPolicy]] = {
    policy.name: policy for policy in (SapPolicy, StaticBlockPolicy, RandomPolicy, CyclicPolicy)
}

