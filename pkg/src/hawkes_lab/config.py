"""Run configuration (JSON) validated with pydantic; unknown keys are rejected."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import HawkesParams, ModelSpec
from .errors import ConfigError

Matrix = List[List[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    dimension: int = Field(1, ge=1)
    linearity: Literal["linear", "nonlinear"] = "linear"
    baseline_only: bool = False
    mark_link: Literal["none", "exp", "power", "normexp", "normpower"] = "none"
    b_structure: Literal["receiver", "full"] = "receiver"
    gamma_structure: Literal["full", "receiver", "shared"] = "full"

    def to_spec(self) -> ModelSpec:
        return ModelSpec(self.dimension, self.linearity, self.baseline_only, self.mark_link,
                         self.b_structure, self.gamma_structure)


class ParamsConfig(_Strict):
    m: List[float]
    a: Optional[Matrix] = None
    b: Optional[Union[List[float], Matrix]] = None
    gamma: Optional[Matrix] = None
    psi: Optional[float] = Field(None, gt=0)

    def to_params(self) -> HawkesParams:
        d = len(self.m)
        a = self.a if self.a is not None else [[0.0] * d for _ in range(d)]
        b = self.b if self.b is not None else [1.0] * d
        return HawkesParams(m=self.m, a=a, b=b, gamma=self.gamma, psi=self.psi)


class BoundsConfig(_Strict):
    lower: Dict[str, float] = Field(default_factory=dict)
    upper: Dict[str, float] = Field(default_factory=dict)


class TestConfig(_Strict):
    alpha: float = Field(0.05, gt=0, lt=1)
    coefficient: Optional[str] = None
    coefficient_j: Optional[str] = None
    null: Optional[float] = None
    alternative: Literal["two-sided", "less", "greater"] = "two-sided"
    bootstrap_draws: int = Field(150, ge=50)
    p_of_n: Optional[int] = Field(None, ge=1)
    num_subsets: int = Field(200, ge=1)
    xi: Union[float, Literal["auto"]] = "auto"
    marked_link: Literal["normexp", "normpower"] = "normexp"
    information: Literal["auto", "outer", "observed"] = "auto"
    pooled: bool = False
    band_mc: int = Field(10_000, ge=100)


class RunConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    params: Optional[ParamsConfig] = None
    init: Optional[ParamsConfig] = None
    bounds: Optional[BoundsConfig] = None
    fixed: Dict[str, float] = Field(default_factory=dict)
    seed: int = Field(0, ge=0, lt=2**64)
    horizon: Optional[float] = Field(None, gt=0)
    repetitions: int = Field(1, ge=0)
    multistart: int = Field(5, ge=1)
    max_iter: int = Field(2000, ge=1)
    jobs: Optional[int] = None
    test: TestConfig = Field(default_factory=TestConfig)
    experiment: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _dimensions_agree(self):
        d = self.model.dimension
        for name in ("params", "init"):
            p = getattr(self, name)
            if p is not None and len(p.m) != d:
                raise ValueError(f"{name}.m has length {len(p.m)} but the model dimension is {d}")
        return self

    def spec(self) -> ModelSpec:
        return self.model.to_spec()


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Read a JSON config (or defaults) and apply top-level overrides."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    for key, val in (overrides or {}).items():
        if val is not None:
            data[key] = val
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def config_schema() -> dict:
    return RunConfig.model_json_schema()
