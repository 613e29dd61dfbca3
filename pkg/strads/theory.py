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
"""Exhaustive numerical checks of the importance-sampling lower bound on small nonnegative Lasso instances.

Every instance is the duplicated-feature form: 2J nonnegative coefficients over [X, -X], with objective
F(β) = ½‖y - X₂β‖² + λΣβ.
"""

import itertools
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from logging import getLogger

import numpy as np

from .core import StandardizedMatrix, standardize, standardize_vector
from .data_io import LassoDataset
from .engine import filter_dependent, order_by_importance
from .lasso import duplicate_features
from .monitoring import LogLevel, RunLogger
from .utils import DegenerateDistributionError, EnumerationBoundError


__all__ = [
    "NonnegLassoInstance",
    "PropertyResult",
    "delta_beta",
    "quadratic_bound_gap",
    "expected_decrease",
    "optimal_subset",
    "interference_term",
    "nonneg_objective",
    "nonneg_gradient",
    "solve_nonneg",
    "random_instance",
    "run_property_suite",
    "direction_rate_passes",
]


logger = getLogger(__name__)

MAX_ENUMERATED_VARIABLES = 16
BOUND_SLACK = 1e-9
COMPONENT_SLACK = 1e-12
EPSILON_LIMIT = 1e-3
THEOREM_PASS_RATE = 0.9
DEFAULT_RHO = 5e-4
DEFAULT_LAMBDA = 0.05


@dataclass
class NonnegLassoInstance:
    """
    Lasso rewritten over 2J nonnegative coefficients.

    Args:
        X2 ([`StandardizedMatrix`]): 2J columns; column j + J is -column j.
        y (`np.ndarray`): Standardized response.
        lam (`float`): Regularization strength.
        beta (`np.ndarray`): Current nonnegative coefficients, length 2J.
    """

    X2: StandardizedMatrix
    y: np.ndarray
    lam: float
    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        n = self.X2.n_features
        if n % 2 or self.beta.shape != (n,):
            raise ValueError(f"expected an even number of columns and {n} coefficients")
        if np.any(self.beta < 0):
            raise ValueError("coefficients of the duplicated form must be nonnegative")
        half = n // 2
        if not np.allclose(self.X2.values[:, half:], -self.X2.values[:, :half], rtol=0.0, atol=1e-12):
            raise ValueError("column j + J must be the negation of column j")

    @classmethod
    def from_dataset(cls, data: LassoDataset, lam: float, beta: np.ndarray | None = None) -> "NonnegLassoInstance":
        doubled = duplicate_features(data)
        beta = np.zeros(doubled.n_features) if beta is None else beta
        return cls(X2=doubled.X, y=np.array(doubled.y), lam=lam, beta=beta)

    @property
    def n_variables(self) -> int:
        return self.X2.n_features

    def with_beta(self, beta: np.ndarray) -> "NonnegLassoInstance":
        return NonnegLassoInstance(X2=self.X2, y=self.y, lam=self.lam, beta=beta)

    def signed_beta(self) -> np.ndarray:
        """The equivalent J-dimensional Lasso coefficients β_j - β_{j+J}."""
        half = self.n_variables // 2
        return self.beta[:half] - self.beta[half:]


def nonneg_objective(instance: NonnegLassoInstance, beta: np.ndarray | None = None) -> float:
    beta = instance.beta if beta is None else beta
    residual = instance.y - instance.X2.matvec(beta)
    return 0.5 * float(residual @ residual) + instance.lam * float(np.sum(beta))


def nonneg_gradient(instance: NonnegLassoInstance, beta: np.ndarray | None = None) -> np.ndarray:
    """-X₂ᵀ(y - X₂β) + λ, the gradient of F on the nonnegative orthant."""
    beta = instance.beta if beta is None else beta
    return -instance.X2.gram_dot(instance.y - instance.X2.matvec(beta)) + instance.lam


def delta_beta(j: int, instance: NonnegLassoInstance, gradient: np.ndarray | None = None) -> float:
    """max(-β_j, -∇F_j): the exact coordinate step, clamped at the nonnegativity boundary."""
    gradient = nonneg_gradient(instance) if gradient is None else gradient
    return float(max(-instance.beta[j], -gradient[j]))


def all_delta_beta(instance: NonnegLassoInstance) -> np.ndarray:
    return np.maximum(-instance.beta, -nonneg_gradient(instance))


def quadratic_bound_gap(instance: NonnegLassoInstance, dbeta: np.ndarray) -> float:
    """[F(β) - F(β + Δβ)] - [-Δβᵀ∇F - ½ΔβᵀX₂ᵀX₂Δβ].

    Nonnegative up to rounding, and zero for squared loss.

    Raises:
        ValueError: If β + Δβ leaves the nonnegative orthant.
    """
    dbeta = np.asarray(dbeta, dtype=np.float64)
    updated = instance.beta + dbeta
    if np.any(updated < -1e-15):
        raise ValueError(f"infeasible update: coefficient {int(np.argmin(updated))} becomes {updated.min():.3g}")
    updated = np.maximum(updated, 0.0)
    decrease = nonneg_objective(instance) - nonneg_objective(instance, updated)
    moved = instance.X2.matvec(dbeta)
    bound = -float(dbeta @ nonneg_gradient(instance)) - 0.5 * float(moved @ moved)
    return decrease - bound


def _positive_support(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1 or np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be a finite nonnegative vector")
    if not weights.sum() > 0:
        raise DegenerateDistributionError("degenerate importance distribution")
    return np.flatnonzero(weights > 0)


def _check_enumeration_bound(size: int) -> None:
    if size > MAX_ENUMERATED_VARIABLES:
        raise EnumerationBoundError(
            f"enumeration bound exceeded: {size} variables (at most {MAX_ENUMERATED_VARIABLES})"
        )


def _rho_compatible(subset: Sequence[int], dep: Callable[[int, int], float], rho: float) -> bool:
    return all(abs(dep(a, b)) <= rho for a, b in itertools.combinations(subset, 2))


def expected_decrease(instance: NonnegLassoInstance, weights: np.ndarray, P: int, rho: float) -> float:
    """Exact mean objective decrease of one parallel round.

    Enumerates every ordered draw of P variables without replacement, each draw proportional to weight
    among those not yet drawn; draws containing a pair coupled beyond `rho` are discarded and the
    remaining probability renormalized. All drawn variables take their δβ step against the same β.
    """
    _check_enumeration_bound(instance.n_variables)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (instance.n_variables,):
        raise ValueError(f"expected {instance.n_variables} weights")
    support = _positive_support(weights)
    steps = all_delta_beta(instance)
    base = nonneg_objective(instance)
    dep = instance.X2.correlation
    total_weight = float(weights.sum())
    decreases: dict[frozenset, float] = {}
    mass, accumulated = 0.0, 0.0
    for draw in itertools.permutations(support.tolist(), min(P, support.size)):
        if not _rho_compatible(draw, dep, rho):
            continue
        probability, remaining = 1.0, total_weight
        for v in draw:
            probability *= weights[v] / remaining
            remaining -= weights[v]
        key = frozenset(draw)
        if key not in decreases:
            update = np.zeros(instance.n_variables)
            update[list(draw)] = steps[list(draw)]
            decreases[key] = base - nonneg_objective(instance, instance.beta + update)
        mass += probability
        accumulated += probability * decreases[key]
    return accumulated / mass if mass > 0 else 0.0


def subset_coupling(subset: Sequence[int], dep: Callable[[int, int], float]) -> float:
    """Σ|dep| over the pairs of `subset`."""
    return float(sum(abs(dep(a, b)) for a, b in itertools.combinations(subset, 2)))


def optimal_subset(candidates: Sequence[int], dep: Callable[[int, int], float], rho: float, P: int) -> list[int]:
    """Exact minimum-coupling subset of P pairwise ρ-compatible candidates.

    Ties go to the lexicographically smallest id set. When no P-subset is feasible the largest feasible
    size below P is searched instead.
    """
    _check_enumeration_bound(len(candidates))
    ordered = sorted(int(c) for c in candidates)
    for size in range(min(P, len(ordered)), 0, -1):
        best, best_cost = None, np.inf
        for subset in itertools.combinations(ordered, size):
            if not _rho_compatible(subset, dep, rho):
                continue
            cost = subset_coupling(subset, dep)
            if cost < best_cost:
                best, best_cost = list(subset), cost
        if best is not None:
            return best
    return []


def interference_term(instance: NonnegLassoInstance, update_set: Sequence[int], rho: float) -> float:
    """max over pairs of the set of ρ·|δβ_j|·|δβ_k|; zero for fewer than two variables."""
    steps = np.abs(all_delta_beta(instance))
    return max((rho * steps[a] * steps[b] for a, b in itertools.combinations(update_set, 2)), default=0.0)


def solve_nonneg(instance: NonnegLassoInstance, tol: float = 1e-12, max_sweeps: int = 100_000) -> np.ndarray:
    """Projected cyclic coordinate descent to a stationary point of F over β ≥ 0."""
    beta = instance.beta.copy()
    residual = instance.y - instance.X2.matvec(beta)
    for _ in range(max_sweeps):
        largest = 0.0
        for j in range(instance.n_variables):
            x_j = instance.X2.column(j)
            step = max(-beta[j], float(x_j @ residual) - instance.lam)
            if step != 0.0:
                beta[j] += step
                residual -= step * x_j
                largest = max(largest, abs(step))
        if largest <= tol:
            break
    return beta


def random_instance(
    seed: int, n_vars: int = 8, lam: float = DEFAULT_LAMBDA, perturbation: float = 1e-4
) -> NonnegLassoInstance:
    """Seeded duplicated-form instance whose base columns are orthonormal up to `perturbation`.

    Coefficients start at zero.
    """
    _check_enumeration_bound(n_vars)
    if n_vars < 2 or n_vars % 2:
        raise ValueError(f"n_vars must be a positive even number, got {n_vars}")
    rng = np.random.default_rng(seed)
    J = n_vars // 2
    N = J + 8
    gaussian = rng.standard_normal((N, J))
    basis, _ = np.linalg.qr(gaussian - gaussian.mean(axis=0))
    X = standardize(basis + perturbation * rng.standard_normal((N, J)))
    true_beta = rng.choice([-1.0, 1.0], size=J) * rng.uniform(0.5, 1.5, size=J)
    y = standardize_vector(X.matvec(true_beta) + 0.1 * rng.standard_normal(N))
    return NonnegLassoInstance.from_dataset(LassoDataset(X=X, y=y), lam)


@dataclass
class PropertyResult:
    """Outcome of one property on one seeded instance."""

    name: str
    seed: int | None
    passed: bool
    value: float
    detail: str = ""
    required: bool = True

    def line(self) -> str:
        where = "aggregate" if self.seed is None else f"seed={self.seed}"
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} {where} value={self.value:.3e}" + (f" {self.detail}" if self.detail else "")

    def dict(self):
        return {
            "name": self.name,
            "seed": self.seed,
            "passed": self.passed,
            "value": self.value,
            "detail": self.detail,
            "required": self.required,
        }


def _bound_validity(instance: NonnegLassoInstance, rng: np.random.Generator, trials: int) -> float:
    """Smallest gap over random feasible updates, from β = 0 and from a random feasible β."""
    worst = np.inf
    points = [instance, instance.with_beta(rng.uniform(0.0, 0.5, instance.n_variables))]
    for trial in range(trials):
        point = points[trial % 2]
        dbeta = rng.uniform(-point.beta, 1.0)
        worst = min(worst, quadratic_bound_gap(point, dbeta))
    return float(worst)


def _component_excess(instance: NonnegLassoInstance) -> float:
    """max_j of -δβ_j∇F_j - ½δβ_j² - ½δβ_j²; nonpositive when the inequality holds."""
    gradient = nonneg_gradient(instance)
    steps = np.maximum(-instance.beta, -gradient)
    return float(np.max(-steps * gradient - steps**2))


def direction_rate_passes(favourable: int, eligible: int, n_seeds: int) -> bool:
    """At least 90% of the eligible seeds favour importance sampling, and they make up 90% of all seeds."""
    if eligible == 0:
        return False
    return favourable / eligible >= THEOREM_PASS_RATE and favourable >= math.ceil(THEOREM_PASS_RATE * n_seeds)


def run_property_suite(
    seeds: Sequence[int],
    n_vars: int = 8,
    workers: int = 2,
    rho: float = DEFAULT_RHO,
    trials: int = 1000,
    lam: float = DEFAULT_LAMBDA,
    logger: RunLogger | None = None,
) -> list[PropertyResult]:
    """Four properties per seed, plus the aggregated importance-sampling direction check.

    Per seed: bound validity, component inequality, greedy feasibility and the direction check. Only
    the first three, and the aggregate direction rate, are required to pass.

    Raises:
        EnumerationBoundError: If `n_vars` exceeds the exhaustive-enumeration bound.
    """
    _check_enumeration_bound(n_vars)
    logger = logger if logger is not None else RunLogger(level=LogLevel.ERROR)
    results: list[PropertyResult] = []
    eligible, favourable = 0, 0
    for seed in seeds:
        instance = random_instance(seed, n_vars, lam)
        rng = np.random.default_rng([seed, 1])
        dep = instance.X2.correlation

        gap = _bound_validity(instance, rng, trials)
        results.append(PropertyResult("bound_validity", seed, gap >= -BOUND_SLACK, gap))

        excess = _component_excess(instance)
        results.append(PropertyResult("component_inequality", seed, excess <= COMPONENT_SLACK, excess))

        steps = all_delta_beta(instance)
        ordered = order_by_importance(np.arange(n_vars), 0.5 * steps**2)
        greedy = filter_dependent(ordered, dep, rho, workers)
        exact = optimal_subset(range(n_vars), dep, rho, workers)
        feasible = _rho_compatible(greedy, dep, rho) and _rho_compatible(exact, dep, rho)
        results.append(
            PropertyResult(
                "greedy_feasibility",
                seed,
                feasible,
                subset_coupling(greedy, dep) - subset_coupling(exact, dep),
                detail=f"greedy={greedy} exact={exact}",
            )
        )

        epsilon = interference_term(instance, range(n_vars), rho)
        squared = expected_decrease(instance, 0.5 * steps**2, workers, rho)
        uniform = expected_decrease(instance, np.ones(n_vars), workers, rho)
        in_regime = epsilon < EPSILON_LIMIT
        if in_regime:
            eligible += 1
            favourable += int(squared >= uniform - COMPONENT_SLACK)
        results.append(
            PropertyResult(
                "theorem_direction",
                seed,
                squared >= uniform - COMPONENT_SLACK,
                squared - uniform,
                detail=f"epsilon={epsilon:.2e}" + ("" if in_regime else " outside-small-interference-regime"),
                required=False,
            )
        )
        for result in results[-4:]:
            logger.log(result.line(), level=LogLevel.DEBUG)

    rate = favourable / eligible if eligible else 0.0
    results.append(
        PropertyResult(
            "theorem_direction_rate",
            None,
            direction_rate_passes(favourable, eligible, len(seeds)),
            rate,
            detail=f"{favourable}/{eligible} eligible of {len(seeds)} seeds",
        )
    )
    return results
