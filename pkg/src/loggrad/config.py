"""Experiment configuration: JSON schema, profiles, hashing and run seeds."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .preproc import InputFormat, QuantizerSpec

ALL_FORMATS = [f.value for f in InputFormat]
SWEEP_FORMATS = ["jpeg8", "raw16", "loggrad_fp", "loggrad_1p5"]
DEFAULT_BRIGHTNESS = [2.0 ** e for e in range(-6, 9)]
PROFILES = ("desk", "paper")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, validate_default=True)


class SyntheticSource(_Strict):
    kind: Literal["synthetic"] = "synthetic"
    n_images: int = Field(600, ge=3)
    illum_range: tuple[float, float] = (0.7, 1.4)
    noise_std: float = Field(12.0, ge=0)

    @field_validator("illum_range")
    @classmethod
    def _range(cls, v):
        if not 0 < v[0] <= v[1]:
            raise ValueError("illum_range must satisfy 0 < lo <= hi")
        return v


class DirectorySource(_Strict):
    kind: Literal["directory"] = "directory"
    path: str


class QuantConfig(_Strict):
    t3: float = Field(0.10, gt=0)
    t5: tuple[float, float] = (0.10, 0.35)

    def specs(self) -> tuple[QuantizerSpec, QuantizerSpec]:
        return QuantizerSpec.three_level(self.t3), QuantizerSpec.five_level(*self.t5)

    @model_validator(mode="after")
    def _valid(self):
        self.specs()
        return self


class ArchConfig(_Strict):
    c1_list: list[int] = [2, 4, 8, 16, 32]
    c2: int = Field(8, ge=1)
    kernel: int = Field(5, ge=1)
    pool: int = Field(4, ge=1)
    padding: Literal["same-zero", "same-replicate", "valid"] = "same-zero"

    @field_validator("c1_list")
    @classmethod
    def _positive(cls, v):
        if not v or min(v) < 1:
            raise ValueError("c1_list must be non-empty with entries >= 1")
        return v


class TrainSettings(_Strict):
    epochs: int = Field(40, ge=1)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0)
    lr_decay: float = Field(0.95, gt=0, le=1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init: Literal["he_normal", "glorot_uniform"] = "he_normal"


class BrightnessConfig(_Strict):
    factors: list[float] = DEFAULT_BRIGHTNESS
    formats: list[InputFormat] = SWEEP_FORMATS
    c1: int = Field(32, ge=1)

    @field_validator("factors")
    @classmethod
    def _positive(cls, v):
        if not v or min(v) <= 0:
            raise ValueError("brightness factors must be positive")
        return v


class SimilarityConfig(_Strict):
    formats: list[InputFormat] = SWEEP_FORMATS
    c1: int = Field(150, ge=2)
    c2: int = Field(5, ge=2)
    threshold: float = 0.98
    bins: int = Field(50, ge=1)
    train: TrainSettings = TrainSettings()


class ReconConfig(_Strict):
    formats: list[InputFormat] = ["loggrad_fp", "loggrad_1p5"]
    channels: int = Field(10, ge=1)
    kernel: int = Field(16, ge=1)
    n_train: int = Field(128, ge=1)     # training images drawn from the train split
    grid_rows: int = Field(4, ge=1)
    train: TrainSettings = TrainSettings(epochs=60, batch_size=16, lr=2e-4, lr_decay=1.0)


class ExperimentConfig(_Strict):
    profile: Literal["desk", "paper"] = "desk"
    source: Union[SyntheticSource, DirectorySource] = Field(SyntheticSource(),
                                                            discriminator="kind")
    resolution: int = Field(96, ge=8)
    split: tuple[int, int, int] = (70, 15, 15)
    formats: list[InputFormat] = SWEEP_FORMATS
    quant: QuantConfig = QuantConfig()
    gamma: float = Field(2.2, gt=0)
    shift: float = Field(1.0, gt=0)
    arch: ArchConfig = ArchConfig()
    train: TrainSettings = TrainSettings()
    brightness: BrightnessConfig = BrightnessConfig()
    similarity: SimilarityConfig = SimilarityConfig()
    recon: ReconConfig = ReconConfig()
    seed: int = Field(0, ge=0, lt=2 ** 64)
    out: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _default_source_kind(cls, data):
        if isinstance(data, dict) and isinstance(data.get("source"), dict):
            data = {**data, "source": {"kind": "synthetic", **data["source"]}}
        return data

    @field_validator("split")
    @classmethod
    def _split(cls, v):
        if sum(v) != 100 or min(v) <= 0:
            raise ValueError("split percentages must be positive and sum to 100")
        return v

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    def hash(self) -> str:
        return config_hash(self)


def config_hash(cfg: ExperimentConfig, exclude: tuple[str, ...] = ("out",)) -> str:
    """Short sha256 over the canonical JSON dump; the output path is excluded."""
    data = cfg.model_dump(mode="json", exclude=set(exclude))
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def run_seed(master: int, exp: str, fmt: str, c1: int, b: float = 1.0) -> int:
    """Independent, reproducible per-run seed."""
    key = f"{master}|{exp}|{fmt}|{c1}|{b!r}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def profile_defaults(profile: str) -> dict:
    """Overrides applied under a profile before the user's file."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    if profile == "desk":
        return {}
    # full-size runs on PASCAL RAW crops
    return {"resolution": 224, "source": {"kind": "directory", "path": "pascal_raw"}}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        prev = out.get(k)
        # a dict with a different "kind" replaces rather than merges
        if isinstance(v, dict) and isinstance(prev, dict) and v.get("kind", prev.get("kind")) == prev.get("kind"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, profile: Optional[str] = None, **overrides) -> ExperimentConfig:
    """Build a config from profile defaults, an optional JSON file, then overrides."""
    user = {}
    if path is not None:
        user = json.loads(Path(path).read_text())
        if not isinstance(user, dict):
            raise ValueError("config file must hold a JSON object")
    profile = profile or user.get("profile", "desk")
    data = _merge(profile_defaults(profile), user)
    data["profile"] = profile
    data = _merge(data, {k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(data)
