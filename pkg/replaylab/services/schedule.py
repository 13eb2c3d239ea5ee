from __future__ import annotations

import math
from fractions import Fraction
from typing import Literal

from replaylab.schemas.study import ReplaySection

MIN_WARMUP = 500


def ratio_from(capacity: int, oldest_age: int) -> float:
    """Replay ratio that keeps the oldest stored policy `oldest_age` gradient steps old."""
    if capacity <= 0 or oldest_age <= 0:
        raise ValueError(f"capacity and oldest_age must be positive, got {capacity}, {oldest_age}")
    return oldest_age / capacity


def default_warmup(batch_size: int, capacity: int) -> int:
    return min(max(MIN_WARMUP, 4 * batch_size), capacity)


class ReplayControl:
    """Gates gradient updates so that updates / env steps tracks the replay ratio exactly.

    Credit is kept as a Fraction: after L learning-phase env steps the total issued is
    floor(ratio * L), with no float drift.
    """

    def __init__(
        self,
        *,
        mode: Literal["fixed_ratio", "fixed_oldest"],
        capacity: int,
        ratio: float | None = None,
        oldest_age: int | None = None,
        warmup: int = 0,
    ) -> None:
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        match mode:
            case "fixed_ratio":
                if ratio is None or ratio <= 0:
                    raise ValueError(f"fixed_ratio mode needs a positive ratio, got {ratio}")
                self.exact_ratio = Fraction(str(ratio))
            case "fixed_oldest":
                if oldest_age is None or oldest_age <= 0:
                    raise ValueError(f"fixed_oldest mode needs a positive oldest_age, got {oldest_age}")
                self.exact_ratio = Fraction(oldest_age, capacity)
            case _:
                raise ValueError(f"Unknown replay mode: {mode}")
        self.mode = mode
        self.capacity = capacity
        self.oldest_age = oldest_age
        self.warmup = warmup
        self.issued = 0

    @classmethod
    def from_section(
        cls,
        section: ReplaySection,
        *,
        capacity: int | None = None,
        mode: Literal["fixed_ratio", "fixed_oldest"] | None = None,
        ratio: float | None = None,
        oldest_age: int | None = None,
    ) -> ReplayControl:
        capacity = capacity if capacity is not None else section.capacity
        warmup = section.warmup if section.warmup is not None else default_warmup(section.batch_size, capacity)
        return cls(
            mode=mode or section.mode,
            capacity=capacity,
            ratio=ratio if ratio is not None else section.ratio,
            oldest_age=oldest_age if oldest_age is not None else section.oldest_age,
            warmup=min(warmup, capacity),
        )

    @property
    def ratio(self) -> float:
        return float(self.exact_ratio)

    @property
    def target_oldest_age(self) -> float:
        return float(self.exact_ratio * self.capacity)

    def updates_due(self, env_steps_taken: int) -> int:
        """Updates to perform now, given the cumulative env step count."""
        learning_steps = env_steps_taken - self.warmup
        if learning_steps <= 0:
            return 0
        due = math.floor(self.exact_ratio * learning_steps) - self.issued
        self.issued += due
        return due

    def refund(self, count: int) -> None:
        """Return credit for updates that were due but could not run."""
        self.issued -= count

    def expected_env_steps(self, gradient_steps: int) -> int:
        return self.warmup + math.ceil(gradient_steps / self.exact_ratio)


class EpsilonSchedule:
    def __init__(self, start: float, end: float, horizon: int) -> None:
        self.start = start
        self.end = end
        self.horizon = max(horizon, 0)

    def value(self, step: int) -> float:
        if step >= self.horizon:
            return self.end
        return self.start + (self.end - self.start) * step / self.horizon


def epsilon(step: int, schedule: EpsilonSchedule) -> float:
    return schedule.value(step)
