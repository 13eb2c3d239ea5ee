from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

TargetKind = Literal["one_step", "n_step", "monte_carlo", "contraction_matched"]
Component = Literal["per", "adam", "c51", "nstep"]

COMPONENTS: tuple[Component, ...] = ("per", "adam", "c51", "nstep")
RAINBOW_N = 3


class TargetSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: TargetKind = "one_step"
    n: int = Field(default=1, ge=1)
    gamma: float = Field(default=0.99, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_horizon(self) -> TargetSpec:
        if self.kind == "one_step" and self.n != 1:
            raise ValueError("one_step targets require n = 1")
        return self

    @property
    def horizon(self) -> int | None:
        """Transitions a target reads ahead of its index; None means up to the episode end."""
        match self.kind:
            case "n_step":
                return self.n
            case "monte_carlo":
                return None
            case _:
                return 1

    @property
    def contraction(self) -> float:
        if self.kind == "monte_carlo":
            return 0.0
        if self.kind == "one_step":
            return self.gamma
        return self.gamma**self.n


class VariantSpec(BaseModel):
    """Which Rainbow components an agent uses; n = 1 means no multi-step component."""

    model_config = ConfigDict(frozen=True)

    use_per: bool = False
    use_adam: bool = False
    use_c51: bool = False
    n: int = Field(default=1, ge=1)
    target: Literal["n_step", "monte_carlo", "contraction_matched"] = "n_step"
    base: Literal["dqn", "rainbow", "custom"] = "custom"
    label: str | None = None

    @model_validator(mode="after")
    def _check_base(self) -> VariantSpec:
        flags = (self.use_per, self.use_adam, self.use_c51)
        if self.base == "dqn" and (any(flags) or self.n != 1 or self.target != "n_step"):
            raise ValueError("dqn variant has every component off and n = 1")
        if self.base == "rainbow" and (not all(flags) or self.n != RAINBOW_N or self.target != "n_step"):
            raise ValueError(f"rainbow variant has every component on and n = {RAINBOW_N}")
        return self

    @classmethod
    def dqn(cls) -> VariantSpec:
        return cls(base="dqn")

    @classmethod
    def rainbow(cls) -> VariantSpec:
        return cls(use_per=True, use_adam=True, use_c51=True, n=RAINBOW_N, base="rainbow")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.base != "custom":
            return self.base
        parts = ["dqn"]
        if self.use_per:
            parts.append("per")
        if self.use_adam:
            parts.append("adam")
        if self.use_c51:
            parts.append("c51")
        if self.target == "contraction_matched":
            parts.append(f"contraction{self.n}")
        elif self.target == "monte_carlo":
            parts.append("mc")
        elif self.n > 1:
            parts.append(f"nstep{self.n}")
        return "+".join(parts)

    def with_component(self, component: Component, *, n: int = RAINBOW_N) -> VariantSpec:
        updates = _component_update(component, enabled=True, n=n)
        suffix = f"nstep{n}" if component == "nstep" else component
        return self.model_copy(update={**updates, "base": "custom", "label": f"{self.name}+{suffix}"})

    def without_component(self, component: Component) -> VariantSpec:
        updates = _component_update(component, enabled=False, n=1)
        return self.model_copy(update={**updates, "base": "custom", "label": f"{self.name}-{component}"})

    def target_spec(self, gamma: float) -> TargetSpec:
        if self.target == "contraction_matched":
            return TargetSpec(kind="contraction_matched", n=self.n, gamma=gamma)
        if self.target == "monte_carlo":
            return TargetSpec(kind="monte_carlo", n=self.n, gamma=gamma)
        if self.n == 1:
            return TargetSpec(kind="one_step", n=1, gamma=gamma)
        return TargetSpec(kind="n_step", n=self.n, gamma=gamma)


def _component_update(component: Component, *, enabled: bool, n: int) -> dict[str, object]:
    match component:
        case "per":
            return {"use_per": enabled}
        case "adam":
            return {"use_adam": enabled}
        case "c51":
            return {"use_c51": enabled}
        case "nstep":
            return {"n": n if enabled else 1}
        case _:
            raise ValueError(f"Unknown component: {component}")
