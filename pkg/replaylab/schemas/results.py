from __future__ import annotations

from pydantic import BaseModel, Field, model_validator


class BufferStats(BaseModel):
    oldest_policy_age: int = Field(ge=0)
    age_bucket_edges: list[int] = Field(default_factory=list)
    age_histogram: list[int] = Field(default_factory=list)
    distinct_state_action_count: int | None = None
    size: int = Field(default=0, ge=0)


class RunResult(BaseModel):
    study: str
    variant: str
    env: str
    capacity: int
    oldest_age: int | None = None
    ratio: float
    seed: int
    returns: list[float] = Field(default_factory=list)
    final_score: float | None = None
    env_steps: int = 0
    gradient_steps: int = 0
    diverged: bool = False
    diagnostic: str | None = None
    buffer: BufferStats | None = None

    @property
    def key(self) -> tuple[str, str, int, int | None]:
        return (self.variant, self.env, self.capacity, self.oldest_age)


class ImprovementStats(BaseModel):
    group: str
    variant: str
    capacity: int | None = None
    oldest_age: int | None = None
    ratio: float | None = None
    per_env: dict[str, float] = Field(default_factory=dict)
    excluded: list[str] = Field(default_factory=list)
    p25: float | None = None
    median: float | None = None
    p75: float | None = None
    bootstrap_mean: float | None = None
    bootstrap_std: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    skipped: bool = False

    @model_validator(mode="after")
    def _check_order(self) -> ImprovementStats:
        if self.median is not None and self.p25 is not None and self.p75 is not None:
            if not self.p25 <= self.median <= self.p75:
                raise ValueError("median must lie between p25 and p75")
        return self

    @property
    def reproduced(self) -> bool | None:
        """Sign of the median held across the bootstrap 95% interval."""
        if self.ci_low is None or self.ci_high is None:
            return None
        return self.ci_low > 0 or self.ci_high < 0
