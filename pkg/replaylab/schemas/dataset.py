from __future__ import annotations

import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

DATASET_FORMAT_VERSION = 1


class DatasetHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: Literal[1] = DATASET_FORMAT_VERSION
    obs_dim: int = Field(gt=0)
    num_actions: int = Field(gt=0)
    count: int | None = Field(default=None, ge=0)


class DatasetRecord(BaseModel):
    """One transition in the JSONL debug format; field names match the binary records."""

    model_config = ConfigDict(extra="forbid")

    state: list[float]
    action: int = Field(ge=0)
    reward: float
    next_state: list[float]
    terminal: bool
    truncated: bool = False
    policy_stamp: int = Field(ge=0)
    env_step: int = Field(ge=0)
    episode_id: int

    @field_validator("reward")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("reward must be finite")
        return value
