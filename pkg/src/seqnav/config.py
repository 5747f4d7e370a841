"""Run configuration: one JSON document, validated with field-path diagnostics."""
from __future__ import annotations

import hashlib
import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SceneConfig(_Strict):
    n_rooms: int = Field(6, ge=1, le=16)
    n_landmarks: int = Field(14, ge=0, le=32)
    room_min: int = Field(10, ge=6, le=80)
    room_max: int = Field(14, ge=6, le=80)

    @model_validator(mode="after")
    def _sizes(self):
        if self.room_max < self.room_min:
            raise ValueError("room_max must be >= room_min")
        return self


class SuiteConfig(_Strict):
    n_tours: int = Field(10, ge=1)
    episodes_per_tour: int = Field(2, ge=1)
    min_subtasks: int = Field(2, ge=1)
    max_subtasks: int = Field(3, ge=1)
    min_goal_separation: float = Field(3.0, ge=0)
    ordered_visibility: bool = True
    min_goal_visibility: float = Field(0.0, ge=0, le=1)
    max_actions: Optional[int] = Field(120, ge=1)
    tour_file: Optional[str] = None

    @model_validator(mode="after")
    def _range(self):
        if self.max_subtasks < self.min_subtasks:
            raise ValueError("max_subtasks must be >= min_subtasks")
        return self


class EaVSettings(_Strict):
    term1: bool = True
    term2: bool = True
    threshold_mode: Literal["learnable", "fixed"] = "learnable"
    fixed_value: Optional[float] = Field(None, ge=0.05, le=1.0)
    init: float = Field(0.30, ge=0.05, le=1.0)

    @model_validator(mode="after")
    def _fixed(self):
        if self.threshold_mode == "fixed" and self.fixed_value is None:
            raise ValueError("fixed threshold mode needs fixed_value")
        return self


class ProviderConfig(_Strict):
    kind: Literal["oracle", "remote"] = "oracle"
    noise_sigma: float = Field(0.02, ge=0)
    match_scale: float = 0.9
    base_score: float = 0.05
    endpoint_env: str = "SEQNAV_EMBED_URL"
    timeout: float = Field(10.0, gt=0)


class PolicyConfig(_Strict):
    kind: Literal["scripted", "neural"] = "scripted"
    error_rate: float = Field(0.0, ge=0, le=1)
    weights: Optional[str] = None  # action-head tensors; seeded random when absent
    map_weights: Optional[str] = None
    hidden: int = Field(64, ge=1)


class MetricConfig(_Strict):
    success_radius: float = Field(3.0, gt=0)
    d_th: float = Field(3.0, gt=0)
    spl_variant: Literal["standard", "tl_ratio"] = "standard"
    ne_geodesic: bool = False


class RunConfig(_Strict):
    seed: int = 0
    scene: SceneConfig = SceneConfig()
    suite: SuiteConfig = SuiteConfig()
    segmentation: Literal["none", "commas", "conjunctions", "periods"] = "periods"
    phi_lambda: float = Field(0.65, gt=0, lt=1)
    logit_scale: float = Field(100.0, gt=0)
    eav: EaVSettings = EaVSettings()
    provider: ProviderConfig = ProviderConfig()
    encoder_dim: int = Field(128, ge=1)
    policy: PolicyConfig = PolicyConfig()
    metrics: MetricConfig = MetricConfig()
    step_cap: int = Field(200, ge=0)
    repeats: int = Field(3, ge=1)
    workers: int = Field(1, ge=1)
    llm_mode: Literal["offline", "live", "record", "replay"] = "offline"

    @field_validator("segmentation", mode="before")
    @classmethod
    def _style(cls, v):
        aliases = {"i": "none", "ii": "commas", "iii": "conjunctions", "iv": "periods"}
        return aliases.get(str(v).lower(), v)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def with_updates(self, **changes) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``{"eav.term1": False}``; re-validated."""
        data = self.model_dump(mode="json")
        for path, value in changes.items():
            node = data
            keys = path.split(".")
            for k in keys[:-1]:
                node = node[k]
            node[keys[-1]] = value
        return RunConfig.model_validate(data)


class ConfigError(ValueError):
    pass


def format_validation_error(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from None


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data)
