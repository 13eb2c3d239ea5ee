from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from replaylab.schemas.variant import TargetKind, VariantSpec

StudyKind = Literal["train", "grid", "additive", "ablative", "offline", "sticky", "contraction", "capacity"]
EnvName = Literal["gridworld", "sparse_maze", "chain"]
NOISE_SUFFIX = "+noise"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class StudySection(_Section):
    kind: StudyKind = "train"
    envs: list[str] = Field(default_factory=lambda: ["gridworld", "gridworld+noise", "sparse_maze"])
    sticky_levels: list[float] = Field(default_factory=lambda: [0.0, 0.25])
    sticky_ns: list[int] = Field(default_factory=lambda: [1, 3, 5, 7])
    seeds: int = Field(default=20, gt=0)
    seed_root: int = Field(default=0, ge=0)

    @field_validator("envs")
    @classmethod
    def _validate_envs(cls, value: list[str]) -> list[str]:
        if not value:
            raise ValueError("at least one environment is required")
        for label in value:
            base = label.removesuffix(NOISE_SUFFIX)
            if base not in {"gridworld", "sparse_maze", "chain"}:
                raise ValueError(f"unknown environment '{label}'")
        return value

    @field_validator("sticky_levels")
    @classmethod
    def _validate_sticky(cls, value: list[float]) -> list[float]:
        if not value or any(not 0.0 <= level <= 1.0 for level in value):
            raise ValueError("sticky levels must lie in [0, 1]")
        return value

    @field_validator("sticky_ns")
    @classmethod
    def _validate_ns(cls, value: list[int]) -> list[int]:
        if not value or any(n < 1 for n in value):
            raise ValueError("n values must be >= 1")
        return value


class EnvSection(_Section):
    name: EnvName = "gridworld"
    sticky: float = Field(default=0.0, ge=0.0, le=1.0)
    reward_noise: bool = False
    noise_sigma: float = Field(default=0.5, ge=0.0)
    episode_cap: int | None = Field(default=None, gt=0)
    chain_length: int = Field(default=5, ge=2)

    @property
    def label(self) -> str:
        label = self.name + (NOISE_SUFFIX if self.reward_noise else "")
        return f"{label}/sticky{self.sticky:g}" if self.sticky > 0 else label


class ReplaySection(_Section):
    mode: Literal["fixed_ratio", "fixed_oldest"] = "fixed_ratio"
    ratio: float = Field(default=0.25, gt=0.0)
    oldest_age: int | None = Field(default=None, gt=0, validate_default=True)
    capacity: int = Field(default=5_000, gt=0)
    capacity_large: int = Field(default=50_000, gt=0)
    batch_size: int = Field(default=32, gt=0)
    warmup: int | None = Field(default=None, ge=1)

    @field_validator("oldest_age")
    @classmethod
    def _require_oldest_age(cls, value: int | None, info: ValidationInfo) -> int | None:
        if value is None and info.data.get("mode") == "fixed_oldest":
            raise ValueError("fixed_oldest mode needs oldest_age")
        return value


class SamplerSection(_Section):
    alpha: float = Field(default=0.5, ge=0.0)
    beta: float = Field(default=0.5, ge=0.0, le=1.0)
    priority_floor: float = Field(default=1e-3, gt=0.0)


class AgentSection(_Section):
    variant: Literal["dqn", "rainbow", "custom"] = "dqn"
    use_per: bool | None = None
    use_adam: bool | None = None
    use_c51: bool | None = None
    n: int | None = Field(default=None, ge=1)
    target: TargetKind | None = None
    approximator: Literal["tabular", "linear", "mlp"] = "mlp"
    hidden: int = Field(default=64, gt=0)
    gamma: float = Field(default=0.99, ge=0.0, lt=1.0)
    atoms: int = Field(default=51, ge=2)
    v_min: float | None = None
    v_max: float | None = None
    target_sync: int = Field(default=200, gt=0)
    epsilon_start: float = Field(default=1.0, ge=0.0, le=1.0)
    epsilon_end: float = Field(default=0.05, ge=0.0, le=1.0)
    epsilon_fraction: float = Field(default=0.1, gt=0.0, le=1.0)
    eval_epsilon: float = Field(default=0.001, ge=0.0, le=1.0)
    eval_episodes: int = Field(default=5, gt=0)

    @model_validator(mode="after")
    def _check_support(self) -> AgentSection:
        if self.v_min is not None and self.v_max is not None and self.v_max <= self.v_min:
            raise ValueError("v_max must exceed v_min")
        return self

    def variant_spec(self) -> VariantSpec:
        match self.variant:
            case "dqn":
                base = VariantSpec.dqn()
            case "rainbow":
                base = VariantSpec.rainbow()
            case _:
                base = VariantSpec()
        updates: dict[str, object] = {}
        for key in ("use_per", "use_adam", "use_c51", "n"):
            value = getattr(self, key)
            if value is not None and value != getattr(base, key):
                updates[key] = value
        if self.target is not None:
            kind = "n_step" if self.target == "one_step" else self.target
            if kind != base.target:
                updates["target"] = kind
        if not updates:
            return base
        return VariantSpec(**{**base.model_dump(exclude={"base", "label"}), **updates})


class OptimSection(_Section):
    kind: Literal["auto", "sgd", "rmsprop", "adam"] = "auto"
    sgd_lr: float = Field(default=0.1, gt=0.0)
    rmsprop_lr: float = Field(default=2.5e-3, gt=0.0)
    rmsprop_decay: float = Field(default=0.95, ge=0.0, lt=1.0)
    rmsprop_eps: float = Field(default=1e-5, gt=0.0)
    adam_lr: float = Field(default=1e-3, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)


class BudgetSection(_Section):
    gradient_steps: int = Field(default=40_000, ge=0)
    iteration_steps: int = Field(default=2_000, gt=0)
    final_fraction: float = Field(default=0.1, gt=0.0, le=1.0)


class GridSection(_Section):
    capacities: list[int] = Field(default_factory=lambda: [1_250, 5_000, 20_000])
    oldest_ages: list[int] = Field(default_factory=lambda: [125, 1_250, 12_500])
    min_ratio: float = Field(default=0.01, ge=0.0)
    baseline_capacity: int = Field(default=5_000, gt=0)
    baseline_oldest_age: int = Field(default=1_250, gt=0)
    variant: Literal["dqn", "rainbow"] = "rainbow"

    @field_validator("capacities", "oldest_ages")
    @classmethod
    def _positive(cls, value: list[int]) -> list[int]:
        if not value or any(v <= 0 for v in value):
            raise ValueError("grid axes need positive entries")
        return value


class OfflineSection(_Section):
    dataset: str | None = None
    format: Literal["binary", "jsonl"] = "binary"
    collect_gradient_steps: int = Field(default=5_000, ge=0)
    ns: list[int] = Field(default_factory=lambda: [1, 3, 5])


class StatsSection(_Section):
    resamples: int = Field(default=1_000, gt=0)
    score_floor: float = Field(default=1e-6, gt=0.0)


class OutputSection(_Section):
    dir: str = "results"


class StudyConfig(_Section):
    study: StudySection = Field(default_factory=StudySection)
    env: EnvSection = Field(default_factory=EnvSection)
    replay: ReplaySection = Field(default_factory=ReplaySection)
    sampler: SamplerSection = Field(default_factory=SamplerSection)
    agent: AgentSection = Field(default_factory=AgentSection)
    optim: OptimSection = Field(default_factory=OptimSection)
    budget: BudgetSection = Field(default_factory=BudgetSection)
    grid: GridSection = Field(default_factory=GridSection)
    offline: OfflineSection = Field(default_factory=OfflineSection)
    stats: StatsSection = Field(default_factory=StatsSection)
    output: OutputSection = Field(default_factory=OutputSection)
