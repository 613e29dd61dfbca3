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

import importlib.resources
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Literal, get_type_hints

import yaml
from dotenv import load_dotenv

from .utils import StradsConfigError


__all__ = ["SchedulerConfig", "RunSpec", "load_preset", "APP_SCHEDULERS", "IMPORTANCE_FORMS"]


SEED_ENV_VAR = "STRADS_SEED"

APP_SCHEDULERS = {
    "lasso": ("sap", "static", "random", "cyclic"),
    "mf": ("balanced", "uniform"),
}

IMPORTANCE_FORMS = ("linear", "squared", "prospective")


def _coerce(name: str, value: Any, kind: Any) -> Any:
    """Converts a raw YAML or JSON value to the declared field type."""
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in ("true", "false"):
            return value.strip().lower() == "true"
        raise StradsConfigError(f"{name} must be a boolean, got {value!r}")
    if kind not in (int, float):
        return value
    if isinstance(value, bool):
        raise StradsConfigError(f"{name} must be a number, got {value!r}")
    if kind is int and isinstance(value, int):
        return value
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise StradsConfigError(f"{name} must be a number, got {value!r}")
    if kind is float:
        return number
    if not number.is_integer():
        raise StradsConfigError(f"{name} must be an integer, got {value!r}")
    return int(number)


@dataclass
class SchedulerConfig:
    """
    Parameters shared by the schedulers, the runtime and the applications.

    Args:
        workers (`int`): Number of parallel workers P.
        candidates (`int`): Candidate pool size P' drawn in step 1 of each round.
        scheduler_threads (`int`): Number of scheduler units S owning disjoint variable partitions.
        rho (`float`): Largest pairwise dependency allowed between variables of one round.
        eta (`float`): Floor added to every importance weight.
        lam (`float`): L1 regularization strength for Lasso.
        init_const (`float`): Initial last-change magnitude, so that untouched variables dominate sampling.
        seed (`int`): Seed for every random stream of a run.
        max_iter (`int`): Round budget (epochs for MF).
        tol (`float`): Convergence tolerance.
        kkt_tol (`float`): KKT confirmation threshold for objective-stall stopping.
        importance (`str`): `"linear"` for |dβ| + η, `"squared"` for ½(dβ)² + η, `"prospective"` for the size of the
            step the variable would take now, plus η.
        drift_check_every (`int`): Rounds between full residual recomputations.
        lambda_mf (`float`): Frobenius regularization strength for matrix factorization.
        rank (`int`): Factor rank K for matrix factorization.
        check_rho_safety (`bool`): Assert the ρ bound on every dispatched pair.
        clock (`str`): `"wall"` records measured seconds, `"simulated"` cumulative critical-path cost.
    """

    workers: int = 16
    candidates: int = 64
    scheduler_threads: int = 1
    rho: float = 0.1
    eta: float = 1e-6
    lam: float = 5e-4
    init_const: float = 1e10
    seed: int = 1
    max_iter: int = 2000
    tol: float = 1e-7
    kkt_tol: float = 1e-4
    importance: Literal["linear", "squared", "prospective"] = "linear"
    drift_check_every: int = 100
    lambda_mf: float = 0.05
    rank: int = 8
    check_rho_safety: bool = True
    clock: Literal["wall", "simulated"] = "wall"

    def validate(self) -> "SchedulerConfig":
        checks = [
            (self.workers >= 1, f"workers must be >= 1, got {self.workers}"),
            (self.candidates >= self.workers, f"candidates ({self.candidates}) must be >= workers ({self.workers})"),
            (self.scheduler_threads >= 1, f"scheduler_threads must be >= 1, got {self.scheduler_threads}"),
            (0.0 <= self.rho <= 1.0, f"rho must lie in [0, 1], got {self.rho}"),
            (self.eta > 0, f"eta must be positive, got {self.eta}"),
            (self.lam >= 0, f"lambda must be nonnegative, got {self.lam}"),
            (self.init_const > 0, f"init_const must be positive, got {self.init_const}"),
            (self.max_iter >= 1, f"max_iter must be >= 1, got {self.max_iter}"),
            (self.tol > 0, f"tol must be positive, got {self.tol}"),
            (self.kkt_tol > 0, f"kkt_tol must be positive, got {self.kkt_tol}"),
            (self.importance in IMPORTANCE_FORMS, f"unknown importance form '{self.importance}'"),
            (self.drift_check_every >= 1, f"drift_check_every must be >= 1, got {self.drift_check_every}"),
            (self.lambda_mf >= 0, f"lambda_mf must be nonnegative, got {self.lambda_mf}"),
            (self.rank >= 1, f"rank must be >= 1, got {self.rank}"),
            (self.clock in ("wall", "simulated"), f"unknown clock '{self.clock}'"),
        ]
        for ok, message in checks:
            if not ok:
                raise StradsConfigError(message)
        for name in ("rho", "eta", "lam", "init_const", "tol", "lambda_mf"):
            if not math.isfinite(getattr(self, name)):
                raise StradsConfigError(f"{name} must be finite")
        return self

    def dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "SchedulerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise StradsConfigError(f"unknown config keys: {sorted(unknown)}")
        hints = get_type_hints(cls)
        return cls(**{name: _coerce(name, value, hints[name]) for name, value in values.items()})

    def with_overrides(self, **overrides) -> "SchedulerConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_preset(app: str) -> dict[str, Any]:
    """Reads the packaged YAML defaults for `app` (`"lasso"` or `"mf"`)."""
    if app not in APP_SCHEDULERS:
        raise StradsConfigError(f"unknown app '{app}'")
    text = importlib.resources.files("strads.presets").joinpath(f"{app}.yaml").read_text()
    return yaml.safe_load(text)


def env_seed() -> int | None:
    """Seed override from the environment (a `.env` file is honoured)."""
    load_dotenv()
    raw = os.getenv(SEED_ENV_VAR)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise StradsConfigError(f"{SEED_ENV_VAR} must be an integer, got '{raw}'")


@dataclass
class RunSpec:
    """
    Everything needed to reproduce one run.

    Args:
        app (`str`): `"lasso"` or `"mf"`.
        scheduler (`str`): `sap|static|random|cyclic` for Lasso, `balanced|uniform` for MF.
        config ([`SchedulerConfig`]): Resolved scheduler configuration.
        data (`str`, *optional*): X CSV (Lasso) or ratings file (MF). Synthetic data is generated when absent.
        y (`str`, *optional*): Response file for Lasso.
        generator (`dict`): Synthetic-generator parameters, used when `data` is absent.
        out (`str`, *optional*): Trace CSV path.
    """

    app: str
    scheduler: str
    config: SchedulerConfig = field(default_factory=SchedulerConfig)
    data: str | None = None
    y: str | None = None
    generator: dict[str, Any] = field(default_factory=dict)
    out: str | None = None

    def validate(self) -> "RunSpec":
        if self.app not in APP_SCHEDULERS:
            raise StradsConfigError(f"unknown app '{self.app}'")
        if self.scheduler not in APP_SCHEDULERS[self.app]:
            raise StradsConfigError(
                f"scheduler '{self.scheduler}' is not valid for app '{self.app}' "
                f"(choose from {', '.join(APP_SCHEDULERS[self.app])})"
            )
        self.config.validate()
        if self.app == "lasso" and self.scheduler in ("sap", "static"):
            if self.config.candidates <= self.config.workers:
                raise StradsConfigError(
                    f"candidates ({self.config.candidates}) must exceed workers ({self.config.workers})"
                )
        if self.app == "lasso" and self.data is not None and self.y is None:
            raise StradsConfigError("lasso runs on files need both --data and --y")
        return self

    def dataset_key(self) -> tuple:
        """Identity of the dataset a run consumes; runs can only be compared when it matches."""
        if self.data is not None:
            return (self.app, "files", os.path.abspath(self.data), os.path.abspath(self.y) if self.y else None)
        return (self.app, "synthetic", tuple(sorted(self.generator.items())))

    def dict(self) -> dict[str, Any]:
        return {
            "app": self.app,
            "scheduler": self.scheduler,
            "config": self.config.dict(),
            "data": self.data,
            "y": self.y,
            "generator": dict(self.generator),
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "RunSpec":
        try:
            return cls(
                app=values["app"],
                scheduler=values["scheduler"],
                config=SchedulerConfig.from_dict(values.get("config", {})),
                data=values.get("data"),
                y=values.get("y"),
                generator=dict(values.get("generator") or {}),
                out=values.get("out"),
            )
        except KeyError as e:
            raise StradsConfigError(f"run spec is missing key {e}")

    @classmethod
    def from_preset(cls, app: str, scheduler: str | None = None, **config_overrides) -> "RunSpec":
        preset = load_preset(app)
        config = SchedulerConfig.from_dict(preset.get("config", {})).with_overrides(**config_overrides)
        return cls(
            app=app,
            scheduler=scheduler or preset["scheduler"],
            config=config,
            generator=dict(preset.get("generator") or {}),
        )
