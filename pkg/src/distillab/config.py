"""JSON experiment configuration with dotted-key overrides.

A single document describes the Gram model, the corruption scenario, the
regularization strength, the rounds to simulate, which computation modes
run, and an optional sweep over corruption rates or dataset sizes.  Any
leaf can be overridden from the command line with ``--set key=value``.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

from .errors import ValidationError
from .gram_models import GramCase, GramModel, SuperclassMap
from .noise_theory import CorruptionMatrix, make_corruption
from .oracle import SolverConfig

__all__ = ["ExperimentConfig", "GramConfig", "CorruptionConfig"]


@dataclass(frozen=True)
class GramConfig:
    case: str = "III"
    K: int = 4
    n: int = 100
    c: Any = 0.4
    d: float = 0.1
    e: float = 0.0
    superclass_sizes: Optional[list[int]] = None
    perturbation_amplitude: float = 0.0

    def build(self, n: Optional[int] = None, seed: int = 0) -> GramModel:
        smap = (
            SuperclassMap.from_sizes(self.superclass_sizes)
            if self.superclass_sizes
            else None
        )
        c = tuple(self.c) if isinstance(self.c, (list, tuple)) else self.c
        return GramModel(
            case=GramCase(self.case),
            K=self.K,
            n=n if n is not None else self.n,
            c=c,
            d=self.d,
            e=self.e,
            superclass_map=smap,
            perturbation_amplitude=self.perturbation_amplitude,
            seed=seed,
        )


@dataclass(frozen=True)
class CorruptionConfig:
    kind: str = "symmetric"
    eta: float = 0.0
    matrix_path: Optional[str] = None

    def build(self, K: int, smap: Optional[SuperclassMap], eta: Optional[float] = None
              ) -> CorruptionMatrix:
        if self.kind == "explicit":
            if self.matrix_path is None:
                raise ValidationError("explicit corruption needs matrix_path")
            return CorruptionMatrix.from_csv(self.matrix_path)
        return make_corruption(
            self.kind,
            self.eta if eta is None else eta,
            K,
            superclass_map=smap,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    gram: GramConfig = field(default_factory=GramConfig)
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    lam: float = 3.125e-4
    t_max: int = 4
    modes: tuple[str, ...] = ("closed_form", "theory")
    sweep_parameter: Optional[str] = None
    sweep_values: Optional[tuple[float, ...]] = None
    seed: int = 0
    output_dir: str = "out"
    workers: int = 1
    solver_learning_rate: float = 0.5
    solver_max_iterations: int = 50_000
    solver_tolerance: float = 1e-10
    solver_warm_start: bool = False

    def __post_init__(self):
        if self.lam <= 0.0:
            raise ValidationError("lam must be positive")
        if self.t_max < 0:
            raise ValidationError("t_max must be >= 0")
        known_modes = {"closed_form", "oracle", "pll", "theory"}
        unknown = set(self.modes) - known_modes
        if unknown:
            raise ValidationError(f"unknown modes {sorted(unknown)}; expected {sorted(known_modes)}")
        object.__setattr__(self, "modes", tuple(self.modes))
        if (self.sweep_parameter is None) != (self.sweep_values is None):
            raise ValidationError("sweep_parameter and sweep_values go together")
        if self.sweep_parameter is not None:
            if self.sweep_parameter not in ("eta", "n"):
                raise ValidationError("sweep_parameter must be 'eta' or 'n'")
            vals = tuple(self.sweep_values)
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ValidationError("sweep values must be sorted ascending")
            object.__setattr__(self, "sweep_values", vals)
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.corruption.matrix_path is not None and not os.path.exists(
            self.corruption.matrix_path
        ):
            raise ValidationError(
                f"corruption matrix_path does not exist: {self.corruption.matrix_path}"
            )

    # -- construction helpers -------------------------------------------------

    def gram_model(self, n: Optional[int] = None) -> GramModel:
        return self.gram.build(n=n, seed=self.seed)

    def corruption_matrix(self, eta: Optional[float] = None) -> CorruptionMatrix:
        smap = self.gram_model().effective_map()
        return self.corruption.build(self.gram.K, smap, eta=eta)

    def solver(self) -> SolverConfig:
        return SolverConfig(
            learning_rate=self.solver_learning_rate,
            max_iterations=self.solver_max_iterations,
            tolerance=self.solver_tolerance,
            seed=self.seed,
            warm_start=self.solver_warm_start,
        )

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"] = list(self.modes)
        if self.sweep_values is not None:
            d["sweep_values"] = list(self.sweep_values)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = copy.deepcopy(data)
        gram = GramConfig(**data.pop("gram", {}))
        corruption = CorruptionConfig(**data.pop("corruption", {}))
        if "modes" in data:
            data["modes"] = tuple(data["modes"])
        if data.get("sweep_values") is not None:
            data["sweep_values"] = tuple(data["sweep_values"])
        try:
            return cls(gram=gram, corruption=corruption, **data)
        except TypeError as exc:
            raise ValidationError(f"bad configuration: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def with_overrides(self, assignments: list[str]) -> "ExperimentConfig":
        """Apply ``key=value`` overrides; dotted keys reach nested sections.

        Values parse as JSON, falling back to plain strings.
        """
        data = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ValidationError(f"override {item!r} is not of the form key=value")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = data
            parts = key.split(".")
            for part in parts[:-1]:
                if part not in node or not isinstance(node[part], dict):
                    raise ValidationError(f"unknown configuration section {part!r}")
                node = node[part]
            if parts[-1] not in node:
                raise ValidationError(f"unknown configuration key {key!r}")
            node[parts[-1]] = value
        return self.from_dict(data)
