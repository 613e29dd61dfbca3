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
from dataclasses import dataclass
from logging import getLogger

import numpy as np

from .config import SchedulerConfig
from .core import CoefState, soft_threshold
from .data_io import LassoDataset
from .engine import ModelApplication, RoundReport, SchedulerCallbacks
from .trace import RunTrace
from .transport import DispatchMsg, UpdateMsg
from .utils import StradsNumericalError


__all__ = [
    "LassoProblem",
    "LassoApplication",
    "LassoStopRule",
    "cd_update",
    "lasso_objective",
    "lasso_callbacks",
    "importance_weights",
    "prospective_steps",
    "kkt_violation",
    "duplicate_features",
    "sequential_cd",
]


logger = getLogger(__name__)

DRIFT_TOL = 1e-6


@dataclass
class LassoProblem:
    """
    An L1-regularized least-squares problem together with its current iterate.

    Args:
        data ([`LassoDataset`]): Standardized design and response.
        lam (`float`): Regularization strength λ.
        coef ([`CoefState`]): Coefficients, staleness bookkeeping and maintained residual.
    """

    data: LassoDataset
    lam: float
    coef: CoefState

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        self.coef.check()

    @classmethod
    def create(cls, data: LassoDataset, lam: float, init_const: float = 1e10) -> "LassoProblem":
        return cls(data=data, lam=lam, coef=CoefState.initial(data.y, data.n_features, init_const))

    @property
    def n_features(self) -> int:
        return self.data.n_features


def cd_update(j: int, prob: LassoProblem) -> tuple[float, float]:
    """Exact one-coordinate minimization of variable j, applied in place.

    With unit-norm columns the soft-threshold argument x_j^T(y - sum_{k != j} x_k beta_k) equals
    x_j^T r + beta_j, so only the maintained residual is read.

    Returns:
        `tuple[float, float]`: The new beta_j and |new - old|.
    """
    coef = prob.coef
    x_j = prob.data.X.column(j)
    old = float(coef.beta[j])
    new = soft_threshold(float(x_j @ coef.residual) + old, prob.lam)
    if new != old:
        coef.residual += (old - new) * x_j
        coef.beta[j] = new
    return new, abs(new - old)


def lasso_objective(prob: LassoProblem, recompute: bool = False) -> float:
    """½‖y - Xβ‖² + λ‖β‖₁, from the maintained residual unless `recompute` is set.

    With `recompute`, the residual is rebuilt from scratch and compared with the maintained one.

    Raises:
        StradsNumericalError: If the two objectives differ by more than 1e-6 ("residual drift").
    """
    coef = prob.coef
    penalty = prob.lam * float(np.abs(coef.beta).sum())
    maintained = 0.5 * float(coef.residual @ coef.residual) + penalty
    if not recompute:
        return maintained
    fresh_residual = prob.data.y - prob.data.X.matvec(coef.beta)
    fresh = 0.5 * float(fresh_residual @ fresh_residual) + penalty
    if abs(fresh - maintained) > DRIFT_TOL:
        raise StradsNumericalError(f"residual drift: maintained objective {maintained!r}, recomputed {fresh!r}")
    return fresh


def importance_weights(delta_last: np.ndarray, eta: float, form: str = "linear") -> np.ndarray:
    if form == "squared":
        return 0.5 * delta_last**2 + eta
    return delta_last + eta


def prospective_steps(prob: LassoProblem, variable_ids) -> np.ndarray:
    """|Δβ_j| each variable would take if updated now, against the maintained residual."""
    ids = np.asarray(variable_ids, dtype=np.int64)
    beta = prob.coef.beta[ids]
    target = soft_threshold(prob.data.X.gram_dot(prob.coef.residual)[ids] + beta, prob.lam)
    return np.abs(target - beta)


def lasso_callbacks(prob: LassoProblem, eta: float, importance: str = "linear") -> SchedulerCallbacks:
    """Scheduler hooks for Lasso.

    Importance is |last change| + η, ½(last change)² + η, or with `importance="prospective"` the
    size of the step the variable would take now plus η. Dependency is the absolute column
    correlation, and progress records the magnitude of every applied change.
    """
    coef = prob.coef
    X = prob.data.X

    def sampling_fn(variable_ids: np.ndarray) -> np.ndarray:
        if importance == "prospective":
            return prospective_steps(prob, variable_ids) + eta
        return importance_weights(coef.delta_last[np.asarray(variable_ids, dtype=np.int64)], eta, importance)

    def dependency_fn(j: int, k: int) -> float:
        return abs(X.correlation(j, k))

    def progress_fn(updates: list[UpdateMsg]) -> None:
        for update in updates:
            coef.delta_last[update.variable_id] = update.delta
            coef.iter_counter[update.variable_id] += 1

    return SchedulerCallbacks(sampling_fn=sampling_fn, dependency_fn=dependency_fn, progress_fn=progress_fn)


def kkt_violation(prob: LassoProblem) -> float:
    """Largest deviation from the subgradient optimality conditions.

    For beta_j = 0 the violation is max(|x_j^T r| - λ, 0); otherwise |x_j^T r - λ sign(beta_j)|.
    """
    gradient = prob.data.X.gram_dot(prob.coef.residual)
    beta = prob.coef.beta
    at_zero = np.maximum(np.abs(gradient) - prob.lam, 0.0)
    off_zero = np.abs(gradient - prob.lam * np.sign(beta))
    return float(np.max(np.where(beta == 0, at_zero, off_zero)))


def duplicate_features(data: LassoDataset) -> LassoDataset:
    """Appends the negated copy of every column: column j + J is -column j."""
    return LassoDataset(X=data.X.hstack_negated(), y=np.array(data.y))


def sequential_cd(prob: LassoProblem, sweeps: int, tol: float = 0.0) -> list[float]:
    """Cyclic coordinate descent over 0..J-1, in place; returns the objective after every sweep.

    Stops early once a sweep changes no coefficient by more than `tol`.
    """
    objectives = []
    for _ in range(sweeps):
        largest = 0.0
        for j in range(prob.n_features):
            _, delta = cd_update(j, prob)
            largest = max(largest, delta)
        objectives.append(lasso_objective(prob))
        if largest <= tol:
            break
    return objectives


@dataclass
class _LassoSnapshot:
    beta: np.ndarray
    residual: np.ndarray


class LassoApplication(ModelApplication):
    """
    Lasso driven by the scheduler: workers compute soft-threshold updates against a frozen residual,
    the barrier applies them serially and corrects the residual.

    Args:
        problem ([`LassoProblem`]): Problem and iterate; mutated only between rounds.
        cfg ([`SchedulerConfig`]): Supplies η, the importance form and the drift-check period.
    """

    name = "lasso"

    def __init__(self, problem: LassoProblem, cfg: SchedulerConfig):
        self.problem = problem
        self.cfg = cfg
        self._callbacks = lasso_callbacks(problem, cfg.eta, cfg.importance)

    @classmethod
    def from_dataset(cls, data: LassoDataset, cfg: SchedulerConfig) -> "LassoApplication":
        return cls(LassoProblem.create(data, cfg.lam, cfg.init_const), cfg)

    @property
    def n_variables(self) -> int:
        return self.problem.n_features

    @property
    def beta(self) -> np.ndarray:
        return self.problem.coef.beta

    def callbacks(self) -> SchedulerCallbacks:
        return self._callbacks

    def snapshot(self) -> _LassoSnapshot:
        coef = self.problem.coef
        beta, residual = coef.beta.copy(), coef.residual.copy()
        beta.flags.writeable = False
        residual.flags.writeable = False
        return _LassoSnapshot(beta=beta, residual=residual)

    def update_kernel(self, dispatch: DispatchMsg, snapshot: _LassoSnapshot) -> list[UpdateMsg]:
        X = self.problem.data.X
        updates = []
        for j in dispatch.block.variable_ids:
            old = float(snapshot.beta[j])
            new = soft_threshold(float(X.column(j) @ snapshot.residual) + old, self.problem.lam)
            updates.append(UpdateMsg(dispatch.round_id, j, new, abs(new - old)))
        return updates

    def apply_updates(self, updates: list[UpdateMsg]) -> None:
        coef = self.problem.coef
        X = self.problem.data.X
        for update in updates:
            old = float(coef.beta[update.variable_id])
            if update.new_value != old:
                coef.residual += (old - update.new_value) * X.column(update.variable_id)
                coef.beta[update.variable_id] = update.new_value

    def objective(self) -> float:
        return lasso_objective(self.problem)

    def active_variables(self) -> int:
        return int(np.count_nonzero(self.problem.coef.beta))

    def checkpoint(self) -> CoefState:
        return self.problem.coef.copy()

    def restore(self, checkpoint: CoefState) -> None:
        coef = self.problem.coef
        coef.beta[:] = checkpoint.beta
        coef.delta_last[:] = checkpoint.delta_last
        coef.iter_counter[:] = checkpoint.iter_counter
        coef.residual[:] = checkpoint.residual

    def after_round(self, round_id: int) -> None:
        if (round_id + 1) % self.cfg.drift_check_every == 0:
            lasso_objective(self.problem, recompute=True)

    def kkt_violation(self) -> float:
        return kkt_violation(self.problem)


class LassoStopRule:
    """
    Convergence predicate for Lasso runs.

    Stops when the KKT violation falls below `tol`, or when the relative objective change across a
    window of ceil(J / P) rounds falls below `tol` and the KKT violation is at most `kkt_tol`.
    `reason` records which criterion fired.
    """

    def __init__(self, app: LassoApplication, cfg: SchedulerConfig):
        self.app = app
        self.tol = cfg.tol
        self.kkt_tol = cfg.kkt_tol
        self.window = math.ceil(app.n_variables / cfg.workers)
        self.reason: str | None = None
        self.last_kkt: float | None = None

    def __call__(self, report: RoundReport, trace: RunTrace) -> bool:
        self.last_kkt = self.app.kkt_violation()
        if self.last_kkt < self.tol:
            self.reason = "kkt"
            return True
        if len(trace) > self.window:
            before = trace.records[-1 - self.window].objective
            change = abs(before - report.objective) / max(abs(before), np.finfo(float).tiny)
            if change < self.tol and self.last_kkt <= self.kkt_tol:
                self.reason = "objective"
                return True
        return False
