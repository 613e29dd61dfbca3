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
import math
import time
from dataclasses import dataclass
from logging import getLogger
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .config import SchedulerConfig
from .core import VariableBlock
from .data_io import SparseRatings
from .engine import SchedulerCallbacks, merge_blocks, update_progress
from .monitoring import LogLevel, RunLogger
from .trace import RunTrace, TraceRecord
from .transport import DispatchMsg, WorkerPool
from .utils import StradsError, StradsNumericalError


__all__ = [
    "FactorState",
    "MfSolver",
    "update_w",
    "update_h",
    "mf_objective",
    "build_balanced_blocks",
    "uniform_blocks",
    "mf_epoch",
    "mf_callbacks",
]


logger = getLogger(__name__)

Axis = Literal["rows", "cols"]

RESIDUAL_TOL = 1e-8
DESCENT_SLACK = 1e-9


def entry_residuals(ratings: SparseRatings, W: np.ndarray, H: np.ndarray) -> np.ndarray:
    """a_ij - w^i . h_j for every observed entry, in entry order."""
    return ratings.values - np.einsum("ek,ke->e", W[ratings.rows], H[:, ratings.cols])


@dataclass
class FactorState:
    """
    Factors W (N x K) and H (K x M) with the residual of every observed entry.

    Args:
        W (`np.ndarray`): Row factors.
        H (`np.ndarray`): Column factors.
        residuals (`np.ndarray`): r_ij = a_ij - w^i . h_j, aligned with the entry order of the ratings.
        lam (`float`): Frobenius regularization strength.
    """

    W: np.ndarray
    H: np.ndarray
    residuals: np.ndarray
    lam: float

    @property
    def rank(self) -> int:
        return self.W.shape[1]

    @classmethod
    def from_factors(cls, ratings: SparseRatings, W, H, lam: float) -> "FactorState":
        W = np.array(W, dtype=np.float64, copy=True)
        H = np.array(H, dtype=np.float64, copy=True)
        if W.shape[0] != ratings.n_rows or H.shape[1] != ratings.n_cols or W.shape[1] != H.shape[0]:
            raise ValueError(f"factor shapes {W.shape} and {H.shape} do not fit {ratings}")
        if lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {lam}")
        return cls(W=W, H=H, residuals=entry_residuals(ratings, W, H), lam=float(lam))

    @classmethod
    def initial(cls, ratings: SparseRatings, rank: int, lam: float, seed: int) -> "FactorState":
        """Seeded factors, uniform in [0, 1/sqrt(rank)]."""
        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(rank)
        W = rng.uniform(0.0, scale, size=(ratings.n_rows, rank))
        H = rng.uniform(0.0, scale, size=(rank, ratings.n_cols))
        return cls.from_factors(ratings, W, H, lam)

    def copy(self) -> "FactorState":
        return FactorState(W=self.W.copy(), H=self.H.copy(), residuals=self.residuals.copy(), lam=self.lam)

    def restore(self, other: "FactorState") -> None:
        self.W[:] = other.W
        self.H[:] = other.H
        self.residuals[:] = other.residuals

    def residual_error(self, ratings: SparseRatings) -> float:
        if ratings.nnz == 0:
            return 0.0
        return float(np.max(np.abs(self.residuals - entry_residuals(ratings, self.W, self.H))))

    def check(self, ratings: SparseRatings) -> None:
        for name in ("W", "H", "residuals"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise StradsNumericalError(f"non-finite entries in {name}")
        drift = self.residual_error(ratings)
        if drift > RESIDUAL_TOL:
            raise StradsNumericalError(f"residual drift {drift:.3g} exceeds {RESIDUAL_TOL}")


@dataclass
class CoordinateStep:
    """New values of one rank for a set of rows (or columns), with the residual corrections they imply."""

    ids: np.ndarray
    values: np.ndarray
    positions: np.ndarray
    corrections: np.ndarray


def _solve_coordinates(
    ids: np.ndarray,
    view: sp.csr_matrix,
    partner: np.ndarray,
    own: np.ndarray,
    partner_factor: np.ndarray,
    residuals: np.ndarray,
    lam: float,
) -> CoordinateStep:
    """Closed-form one-rank updates for `ids`, reading but not writing `own` and `residuals`.

    `view` maps each id to the 1-based positions of its entries. Sums run over each id's entries in
    index order, so a value never depends on which other ids share the call.
    """
    segment = view[ids]
    counts = np.diff(segment.indptr)
    local = np.repeat(np.arange(ids.size), counts)
    positions = np.asarray(segment.data, dtype=np.int64) - 1
    partner_values = partner_factor[partner[positions]]
    current = own[ids]
    numerator = np.bincount(
        local, weights=(residuals[positions] + current[local] * partner_values) * partner_values, minlength=ids.size
    )
    denominator = lam + np.bincount(local, weights=partner_values * partner_values, minlength=ids.size)
    solvable = (counts > 0) & (denominator > 0)
    values = current.copy()
    values[solvable] = numerator[solvable] / denominator[solvable]
    corrections = (values - current)[local] * partner_values
    return CoordinateStep(ids=ids, values=values, positions=positions, corrections=corrections)


def _row_step(ids: np.ndarray, t: int, state: FactorState, ratings: SparseRatings) -> CoordinateStep:
    return _solve_coordinates(
        ids, ratings.row_view, ratings.cols, state.W[:, t], state.H[t], state.residuals, state.lam
    )


def _col_step(ids: np.ndarray, t: int, state: FactorState, ratings: SparseRatings) -> CoordinateStep:
    return _solve_coordinates(
        ids, ratings.col_view, ratings.rows, state.H[t], state.W[:, t], state.residuals, state.lam
    )


def _apply_step(step: CoordinateStep, factor_view: np.ndarray, residuals: np.ndarray) -> None:
    factor_view[step.ids] = step.values
    residuals[step.positions] -= step.corrections


def update_w(i: int, t: int, state: FactorState, ratings: SparseRatings) -> float:
    """Exact minimization over w_t^i with everything else fixed; updates W and the residuals of row i.

    A row without observed entries (or a zero denominator when λ = 0) keeps its value.
    """
    step = _row_step(np.array([i], dtype=np.int64), t, state, ratings)
    _apply_step(step, state.W[:, t], state.residuals)
    return float(step.values[0])


def update_h(j: int, t: int, state: FactorState, ratings: SparseRatings) -> float:
    """Exact minimization over h_j^t; the column counterpart of [`update_w`]."""
    step = _col_step(np.array([j], dtype=np.int64), t, state, ratings)
    _apply_step(step, state.H[t], state.residuals)
    return float(step.values[0])


def mf_objective(state: FactorState, ratings: SparseRatings) -> float:
    """Squared error over observed entries plus λ(‖W‖² + ‖H‖²), recomputed from the factors."""
    errors = entry_residuals(ratings, state.W, state.H)
    return float(errors @ errors) + state.lam * (float(np.sum(state.W**2)) + float(np.sum(state.H**2)))


def _axis_nnz(ratings: SparseRatings, axis: Axis) -> np.ndarray:
    if axis == "rows":
        return ratings.row_nnz()
    if axis == "cols":
        return ratings.col_nnz()
    raise ValueError(f"axis must be 'rows' or 'cols', got {axis!r}")


def build_balanced_blocks(ratings: SparseRatings, P: int, axis: Axis = "rows") -> list[VariableBlock]:
    """min(P, size) blocks of rows (or columns) with near-equal nnz, via LPT over singleton blocks.

    Rows without entries count as one unit of work.
    """
    nnz = _axis_nnz(ratings, axis)
    singletons = [VariableBlock((i,), float(max(count, 1))) for i, count in enumerate(nnz.tolist())]
    return merge_blocks(singletons, P)


def uniform_blocks(ratings: SparseRatings, P: int, axis: Axis = "rows") -> list[VariableBlock]:
    """Contiguous index ranges of ceil(size / P) rows (or columns), regardless of nnz."""
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    nnz = _axis_nnz(ratings, axis)
    width = -(-nnz.size // P)
    return [
        VariableBlock(
            tuple(range(start, min(start + width, nnz.size))), float(max(nnz[start : start + width].sum(), 1))
        )
        for start in range(0, nnz.size, width)
    ]


def block_nnz(blocks: list[VariableBlock], nnz: np.ndarray) -> np.ndarray:
    """Observed entries handled by each block."""
    return np.array([int(nnz[list(block.variable_ids)].sum()) for block in blocks], dtype=np.int64)


def mf_callbacks() -> SchedulerCallbacks:
    """Uniform importance, no coupling between variables, nothing to monitor."""

    def sampling_fn(variable_ids: np.ndarray) -> np.ndarray:
        return np.ones(len(variable_ids))

    def dependency_fn(j: int, k: int) -> float:
        return 0.0

    def progress_fn(updates) -> None:
        return None

    return SchedulerCallbacks(sampling_fn=sampling_fn, dependency_fn=dependency_fn, progress_fn=progress_fn)


def _half_step(
    pool: WorkerPool,
    blocks: list[VariableBlock],
    solve,
    t: int,
    state: FactorState,
    ratings: SparseRatings,
    factor_view: np.ndarray,
    round_id: int,
) -> None:
    dispatches = [DispatchMsg(round_id, 0, block, round_id) for block in blocks]
    steps = pool.run(
        dispatches, lambda dispatch: solve(np.asarray(dispatch.block.variable_ids, dtype=np.int64), t, state, ratings)
    )
    for step in steps:
        _apply_step(step, factor_view, state.residuals)


def mf_epoch(
    state: FactorState,
    ratings: SparseRatings,
    P: int,
    balanced: bool = True,
    pool: WorkerPool | None = None,
    epoch: int = 1,
    row_blocks: list[VariableBlock] | None = None,
    col_blocks: list[VariableBlock] | None = None,
) -> TraceRecord:
    """One rank-major CCD sweep: for every rank, all rows in parallel, barrier, all columns, barrier.

    The critical-path cost is the sum, over the 2K barriers, of the largest nnz handled by one worker.
    The epoch is all-or-nothing: on failure the factors and residuals are restored.

    Raises:
        StradsNumericalError: If the objective increases beyond a relative 1e-9 slack, or factors go non-finite.
    """
    build = build_balanced_blocks if balanced else uniform_blocks
    row_blocks = row_blocks if row_blocks is not None else build(ratings, P, "rows")
    col_blocks = col_blocks if col_blocks is not None else build(ratings, P, "cols")
    row_cost = int(block_nnz(row_blocks, ratings.row_nnz()).max())
    col_cost = int(block_nnz(col_blocks, ratings.col_nnz()).max())

    start = time.perf_counter()
    before = mf_objective(state, ratings)
    checkpoint = state.copy()
    owns_pool = pool is None
    pool = pool if pool is not None else WorkerPool(P)
    try:
        for t in range(state.rank):
            base = 2 * (state.rank * (epoch - 1) + t)
            _half_step(pool, row_blocks, _row_step, t, state, ratings, state.W[:, t], base)
            _half_step(pool, col_blocks, _col_step, t, state, ratings, state.H[t], base + 1)
        after = mf_objective(state, ratings)
        if not math.isfinite(after) or after > before + DESCENT_SLACK * max(1.0, abs(before)):
            raise StradsNumericalError(f"epoch {epoch} increased the objective from {before!r} to {after!r}")
    except BaseException:
        state.restore(checkpoint)
        raise
    finally:
        if owns_pool:
            pool.shutdown()

    return TraceRecord(
        iter=epoch,
        wallclock_s=time.perf_counter() - start,
        objective=after,
        active_vars=int(np.count_nonzero(state.W) + np.count_nonzero(state.H)),
        updates_applied=state.rank * (ratings.n_rows + ratings.n_cols),
        scheduler="balanced" if balanced else "uniform",
        critical_path_cost=float(state.rank * (row_cost + col_cost)),
    )


class MfSolver:
    """
    Parallel CCD matrix factorization over a fixed block layout.

    Args:
        ratings ([`SparseRatings`]): Observed entries.
        cfg ([`SchedulerConfig`]): Supplies P, rank, λ, seed, epoch budget, tolerance and clock.
        balanced (`bool`, default `True`): nnz-balanced blocks, or contiguous uniform blocks.
        logger ([`RunLogger`], *optional*): Console logger.
    """

    name = "mf"

    def __init__(
        self,
        ratings: SparseRatings,
        cfg: SchedulerConfig,
        balanced: bool = True,
        logger: RunLogger | None = None,
    ):
        self.ratings = ratings
        self.cfg = cfg.validate()
        self.balanced = balanced
        self.logger = logger if logger is not None else RunLogger(level=LogLevel.ERROR)
        self.state = FactorState.initial(ratings, cfg.rank, cfg.lambda_mf, cfg.seed)
        build = build_balanced_blocks if balanced else uniform_blocks
        self.row_blocks = build(ratings, cfg.workers, "rows")
        self.col_blocks = build(ratings, cfg.workers, "cols")
        self.callbacks = mf_callbacks()

    @property
    def scheduler(self) -> str:
        return "balanced" if self.balanced else "uniform"

    def run(self, max_iter: int | None = None) -> RunTrace:
        """Epochs until the relative objective change drops below `tol` or the budget is spent.

        Errors carry the records of the completed epochs in `partial_trace`.
        """
        max_iter = max_iter or self.cfg.max_iter
        trace = RunTrace(self.scheduler)
        self.logger.log_run(
            f"mf: {self.ratings.n_rows}x{self.ratings.n_cols}, nnz={self.ratings.nnz}, rank={self.cfg.rank}, "
            f"P={self.cfg.workers}",
            subtitle=f"scheduler={self.scheduler} seed={self.cfg.seed}",
        )
        elapsed, simulated = 0.0, 0.0
        all_rows = np.arange(self.ratings.n_rows)
        try:
            with WorkerPool(self.cfg.workers) as pool:
                for epoch in range(1, max_iter + 1):
                    before = trace.final_objective
                    record = mf_epoch(
                        self.state,
                        self.ratings,
                        self.cfg.workers,
                        self.balanced,
                        pool=pool,
                        epoch=epoch,
                        row_blocks=self.row_blocks,
                        col_blocks=self.col_blocks,
                    )
                    update_progress(self.callbacks, [], all_rows)
                    if epoch % self.cfg.drift_check_every == 0 or epoch == max_iter:
                        self.state.check(self.ratings)
                    elapsed += record.wallclock_s
                    simulated += record.critical_path_cost
                    record.wallclock_s = simulated if self.cfg.clock == "simulated" else elapsed
                    trace.append(record)
                    self.logger.log(
                        f"epoch {epoch}: objective {record.objective:.10g}, "
                        f"critical path {record.critical_path_cost:g}",
                        level=LogLevel.DEBUG,
                    )
                    if before is not None and (
                        abs(before - record.objective) <= self.cfg.tol * max(abs(before), 1e-300)
                    ):
                        break
        except StradsError as e:
            e.partial_trace = trace.records
            raise
        return trace
