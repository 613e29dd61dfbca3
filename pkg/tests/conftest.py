import os
import sys

import numpy as np
import pytest


# Make the source checkout importable without installing it
repo_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if repo_dir not in sys.path:
    sys.path.insert(0, repo_dir)

from strads.config import SchedulerConfig  # noqa: E402
from strads.data_io import gen_synthetic_lasso, gen_synthetic_ratings  # noqa: E402
from strads.engine import ModelApplication, SchedulerCallbacks  # noqa: E402
from strads.monitoring import LogLevel, RunLogger  # noqa: E402
from strads.transport import UpdateMsg, WorkerPool  # noqa: E402


class SeparableQuadratic(ModelApplication):
    """f(x) = sum_j (x_j - c_j)^2; one coordinate step solves a variable exactly.

    `coupling[j, k]` is reported as the dependency between j and k. When `fail_on_call` is set, that call
    of `objective` returns NaN.
    """

    name = "quadratic"

    def __init__(self, target, coupling=None, fail_on_call: int | None = None):
        self.target = np.asarray(target, dtype=np.float64)
        self.x = np.zeros_like(self.target)
        self.delta = np.ones_like(self.target)
        size = self.target.size
        self.coupling = np.zeros((size, size)) if coupling is None else np.asarray(coupling, dtype=np.float64)
        self.fail_on_call = fail_on_call
        self.objective_calls = 0

    @property
    def n_variables(self) -> int:
        return self.target.size

    def callbacks(self) -> SchedulerCallbacks:
        def sampling_fn(ids):
            return self.delta[np.asarray(ids, dtype=np.int64)] + 1e-9

        def dependency_fn(j, k):
            return float(self.coupling[j, k])

        def progress_fn(updates):
            for update in updates:
                self.delta[update.variable_id] = update.delta

        return SchedulerCallbacks(sampling_fn=sampling_fn, dependency_fn=dependency_fn, progress_fn=progress_fn)

    def snapshot(self):
        return self.x.copy()

    def update_kernel(self, dispatch, snapshot):
        return [
            UpdateMsg(dispatch.round_id, j, float(self.target[j]), abs(float(self.target[j] - snapshot[j])))
            for j in dispatch.block.variable_ids
        ]

    def apply_updates(self, updates):
        for update in updates:
            self.x[update.variable_id] = update.new_value

    def objective(self) -> float:
        self.objective_calls += 1
        if self.fail_on_call is not None and self.objective_calls == self.fail_on_call:
            return float("nan")
        return float(np.sum((self.x - self.target) ** 2))

    def checkpoint(self):
        return self.x.copy(), self.delta.copy()

    def restore(self, checkpoint):
        self.x[:], self.delta[:] = checkpoint


@pytest.fixture
def quiet_logger():
    return RunLogger(level=LogLevel.OFF)


@pytest.fixture
def small_lasso():
    dataset, true_beta = gen_synthetic_lasso(
        n=60, j=24, k_nonzero=4, block_size=4, intra_corr=0.5, noise_sd=0.1, seed=3
    )
    return dataset


@pytest.fixture
def small_ratings():
    return gen_synthetic_ratings(n=30, m=20, rank=3, zipf_exponent=1.2, target_nnz=200, noise_sd=0.1, seed=5)


@pytest.fixture
def lasso_config():
    return SchedulerConfig(
        workers=4, candidates=8, rho=0.2, lam=0.05, max_iter=300, tol=1e-9, seed=11, clock="simulated"
    )


@pytest.fixture
def mf_config():
    return SchedulerConfig(workers=3, candidates=3, rank=3, lambda_mf=0.05, max_iter=5, seed=2, clock="simulated")


@pytest.fixture
def pool():
    with WorkerPool(4) as workers:
        yield workers


@pytest.fixture
def quadratic():
    return SeparableQuadratic(np.linspace(-1.0, 1.0, 10))
