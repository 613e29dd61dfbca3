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
from dataclasses import dataclass, field
from functools import lru_cache
from logging import getLogger

import numpy as np

from .utils import DataFormatError


__all__ = [
    "StandardizedMatrix",
    "CoefState",
    "VariableBlock",
    "ScheduleRound",
    "standardize",
    "standardize_vector",
    "soft_threshold",
]


logger = getLogger(__name__)

STANDARDIZE_TOL = 1e-9
CORRELATION_CACHE_SIZE = 1 << 16


def _center_and_normalize(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centered = matrix - matrix.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(centered, axis=0)
    return centered, norms


def standardize(raw_matrix) -> "StandardizedMatrix":
    """Centers every column and scales it to unit L2 norm.

    Args:
        raw_matrix: N x J array-like of reals.

    Raises:
        DataFormatError: If the matrix is empty or a column has zero variance.
    """
    matrix = np.array(raw_matrix, dtype=np.float64, copy=True)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    if matrix.ndim != 2 or matrix.size == 0:
        raise DataFormatError("empty matrix")
    if not np.all(np.isfinite(matrix)):
        row, col = np.argwhere(~np.isfinite(matrix))[0]
        raise DataFormatError(f"non-finite value at row {row}, column {col}")
    centered, norms = _center_and_normalize(matrix)
    scale = np.abs(matrix).max(axis=0)
    degenerate = norms <= 1e-12 * np.maximum(scale, 1.0) * np.sqrt(matrix.shape[0])
    if np.any(degenerate):
        raise DataFormatError(f"zero variance at column {int(np.argmax(degenerate))}")
    return StandardizedMatrix(np.asfortranarray(centered / norms))


def standardize_vector(values, name: str = "y") -> np.ndarray:
    """Centers a vector and scales it to unit norm, the same treatment as design columns."""
    vector = np.asarray(values, dtype=np.float64).ravel()
    if vector.size == 0:
        raise DataFormatError(f"empty {name}")
    centered = vector - vector.mean()
    norm = np.linalg.norm(centered)
    if norm <= 1e-12 * max(float(np.abs(vector).max()), 1.0) * np.sqrt(vector.size):
        raise DataFormatError(f"zero-variance {name}")
    return centered / norm


def soft_threshold(z, lam: float):
    """sign(z) * max(|z| - lam, 0), elementwise for arrays."""
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    result = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
    if np.ndim(result) == 0:
        return float(result)
    return result


class StandardizedMatrix:
    """
    Dense, column-major design matrix whose columns have zero mean and unit L2 norm.

    Instances are immutable and may be shared read-only between threads.

    Args:
        columns (`np.ndarray`): N x J array whose columns are already centred and unit-norm.
        cache_size (`int`, *optional*): Bound of the correlation memo.
    """

    def __init__(self, columns: np.ndarray, cache_size: int = CORRELATION_CACHE_SIZE):
        data = np.asfortranarray(np.asarray(columns, dtype=np.float64))
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DataFormatError("empty matrix")
        means = data.mean(axis=0)
        norms = np.linalg.norm(data, axis=0)
        if np.any(np.abs(means) > STANDARDIZE_TOL) or np.any(np.abs(norms - 1.0) > STANDARDIZE_TOL):
            bad = int(np.argmax((np.abs(means) > STANDARDIZE_TOL) | (np.abs(norms - 1.0) > STANDARDIZE_TOL)))
            raise DataFormatError(f"column {bad} is not standardized (mean {means[bad]:.3g}, norm {norms[bad]:.12g})")
        data.flags.writeable = False
        self._data = data
        self._correlation = lru_cache(maxsize=cache_size)(self._dot)

    @property
    def n_samples(self) -> int:
        return self._data.shape[0]

    @property
    def n_features(self) -> int:
        return self._data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    @property
    def values(self) -> np.ndarray:
        """Read-only N x J view."""
        return self._data

    def column(self, j: int) -> np.ndarray:
        return self._data[:, j]

    def _dot(self, j: int, k: int) -> float:
        return float(self._data[:, j] @ self._data[:, k])

    def _check_index(self, j: int) -> int:
        j = int(j)
        if not 0 <= j < self.n_features:
            raise IndexError(f"column index {j} out of range [0, {self.n_features})")
        return j

    def correlation(self, j: int, k: int) -> float:
        """x_j^T x_k, memoized on the unordered pair."""
        j, k = self._check_index(j), self._check_index(k)
        return self._correlation(min(j, k), max(j, k))

    def gram_dot(self, vector: np.ndarray) -> np.ndarray:
        """X^T v for a length-N vector."""
        return self._data.T @ vector

    def matvec(self, beta: np.ndarray) -> np.ndarray:
        return self._data @ beta

    def hstack_negated(self) -> "StandardizedMatrix":
        """[X, -X]; negated columns keep zero mean and unit norm."""
        return StandardizedMatrix(np.hstack([self._data, -self._data]))


@dataclass
class CoefState:
    """
    Lasso coefficients with per-variable staleness bookkeeping and the maintained residual.

    Args:
        beta (`np.ndarray`): Current coefficients, length J.
        delta_last (`np.ndarray`): Magnitude of the last change of each coefficient.
        iter_counter (`np.ndarray`): Per-variable update counters, starting at 2.
        residual (`np.ndarray`): y - X beta, length N.
    """

    beta: np.ndarray
    delta_last: np.ndarray
    iter_counter: np.ndarray
    residual: np.ndarray

    @classmethod
    def initial(cls, y: np.ndarray, n_features: int, init_const: float) -> "CoefState":
        """beta = 0 with the previous iterate taken as `init_const`, so every |dβ| starts at init_const."""
        return cls(
            beta=np.zeros(n_features),
            delta_last=np.full(n_features, float(init_const)),
            iter_counter=np.full(n_features, 2, dtype=np.int64),
            residual=np.array(y, dtype=np.float64, copy=True),
        )

    def copy(self) -> "CoefState":
        return CoefState(
            beta=self.beta.copy(),
            delta_last=self.delta_last.copy(),
            iter_counter=self.iter_counter.copy(),
            residual=self.residual.copy(),
        )

    def check(self) -> None:
        if np.any(self.delta_last < 0):
            raise ValueError("delta_last must be nonnegative")
        if np.any(self.iter_counter < 2):
            raise ValueError("iteration counters start at 2")


@dataclass
class VariableBlock:
    """
    A dispatchable unit of variables.

    Args:
        variable_ids (`tuple[int, ...]`): Nonempty, duplicate-free, in dispatch order.
        workload (`float`): Positive cost estimate (variable count for Lasso, nnz for MF).
        owner_thread (`int`): Scheduler thread that issued the block.
    """

    variable_ids: tuple[int, ...]
    workload: float
    owner_thread: int = 0

    def __post_init__(self):
        self.variable_ids = tuple(int(v) for v in self.variable_ids)
        if not self.variable_ids:
            raise ValueError("a block needs at least one variable")
        if len(set(self.variable_ids)) != len(self.variable_ids):
            raise ValueError(f"duplicate variables in block {self.variable_ids}")
        if not self.workload > 0:
            raise ValueError(f"block workload must be positive, got {self.workload}")

    def __len__(self) -> int:
        return len(self.variable_ids)

    def dict(self):
        return {"variable_ids": list(self.variable_ids), "workload": self.workload, "owner_thread": self.owner_thread}


@dataclass
class ScheduleRound:
    """The blocks issued by one scheduler thread in one round."""

    round_id: int
    blocks: list[VariableBlock] = field(default_factory=list)
    issuing_thread: int = 0

    def check(self, workers: int) -> None:
        if len(self.blocks) > workers:
            raise ValueError(f"round {self.round_id} issues {len(self.blocks)} blocks for {workers} workers")
        seen: set[int] = set()
        for block in self.blocks:
            overlap = seen.intersection(block.variable_ids)
            if overlap:
                raise ValueError(f"round {self.round_id} dispatches variables {sorted(overlap)} twice")
            seen.update(block.variable_ids)

    @property
    def variable_ids(self) -> list[int]:
        return [v for block in self.blocks for v in block.variable_ids]

    def critical_path_cost(self) -> float:
        return max((block.workload for block in self.blocks), default=0.0)
