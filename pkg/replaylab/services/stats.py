from __future__ import annotations

from collections.abc import Mapping, Sequence
from typing import NamedTuple, Protocol

import numpy as np
from loguru import logger

from replaylab.schemas.results import ImprovementStats

SCORE_FLOOR = 1e-6

Scores = Mapping[str, Sequence[float]]


class IndexSource(Protocol):
    def integers(self, low: int, high: int, size: int) -> np.ndarray: ...


class RelativeImprovement(NamedTuple):
    per_env: dict[str, float]
    excluded: list[str]


def _common_envs(new_scores: Scores, base_scores: Scores) -> list[str]:
    envs = sorted(set(new_scores) & set(base_scores))
    if not envs:
        raise ValueError("new and base scores share no environment")
    for env in envs:
        if len(new_scores[env]) == 0 or len(base_scores[env]) == 0:
            raise ValueError(f"environment {env} needs at least one seed on each side")
    return envs


def _improvements(
    envs: Sequence[str],
    new_means: Sequence[float],
    base_means: Sequence[float],
    score_floor: float,
) -> RelativeImprovement:
    per_env: dict[str, float] = {}
    excluded: list[str] = []
    for env, new, base in zip(envs, new_means, base_means, strict=True):
        if abs(base) < score_floor:
            excluded.append(env)
            continue
        per_env[env] = 100.0 * (new - base) / abs(base)
    return RelativeImprovement(per_env, excluded)


def relative_improvement(
    new_scores: Scores,
    base_scores: Scores,
    *,
    score_floor: float = SCORE_FLOOR,
) -> RelativeImprovement:
    """Percent change of the per-env mean score; envs whose base mean is below the floor are excluded."""
    envs = _common_envs(new_scores, base_scores)
    result = _improvements(
        envs,
        [float(np.mean(new_scores[env])) for env in envs],
        [float(np.mean(base_scores[env])) for env in envs],
        score_floor,
    )
    if result.excluded:
        logger.info("Excluded environments with near-zero baseline envs={envs}", envs=result.excluded)
    return result


def percentile_summary(values: Sequence[float]) -> tuple[float, float, float]:
    if len(values) == 0:
        raise ValueError("percentile_summary of an empty set")
    p25, p50, p75 = np.percentile(np.asarray(values, dtype=np.float64), [25, 50, 75])
    return float(p25), float(p50), float(p75)


def bootstrap_medians(
    base_scores: Scores,
    new_scores: Scores,
    resamples: int,
    rng: np.random.Generator | IndexSource,
    *,
    score_floor: float = SCORE_FLOOR,
) -> np.ndarray:
    """Median relative improvement of each resample; seeds drawn with replacement per env and side.

    Draw order is fixed: per resample, envs in sorted order, base seeds then new seeds.
    Resamples where every env falls under the floor are dropped.
    """
    envs = _common_envs(new_scores, base_scores)
    base = [np.asarray(base_scores[env], dtype=np.float64) for env in envs]
    new = [np.asarray(new_scores[env], dtype=np.float64) for env in envs]
    medians: list[float] = []
    for _ in range(resamples):
        base_means: list[float] = []
        new_means: list[float] = []
        for base_seeds, new_seeds in zip(base, new, strict=True):
            base_means.append(float(base_seeds[rng.integers(0, base_seeds.size, size=base_seeds.size)].mean()))
            new_means.append(float(new_seeds[rng.integers(0, new_seeds.size, size=new_seeds.size)].mean()))
        result = _improvements(envs, new_means, base_means, score_floor)
        if result.per_env:
            medians.append(float(np.median(list(result.per_env.values()))))
    return np.asarray(medians, dtype=np.float64)


def bootstrap_median(
    base_scores: Scores,
    new_scores: Scores,
    resamples: int,
    rng: np.random.Generator | IndexSource,
    *,
    score_floor: float = SCORE_FLOOR,
) -> tuple[float, float]:
    """Mean and population std of the bootstrap median improvement."""
    medians = bootstrap_medians(base_scores, new_scores, resamples, rng, score_floor=score_floor)
    if medians.size == 0:
        return float("nan"), float("nan")
    return float(medians.mean()), float(medians.std())


def improvement_stats(
    *,
    group: str,
    variant: str,
    base_scores: Scores,
    new_scores: Scores,
    resamples: int,
    rng: np.random.Generator,
    score_floor: float = SCORE_FLOOR,
    capacity: int | None = None,
    oldest_age: int | None = None,
    ratio: float | None = None,
) -> ImprovementStats:
    improvement = relative_improvement(new_scores, base_scores, score_floor=score_floor)
    stats = ImprovementStats(
        group=group,
        variant=variant,
        capacity=capacity,
        oldest_age=oldest_age,
        ratio=ratio,
        per_env=improvement.per_env,
        excluded=improvement.excluded,
    )
    if not improvement.per_env:
        logger.warning(
            "No environment left after the score floor group={group} variant={variant}", group=group, variant=variant
        )
        return stats
    p25, median, p75 = percentile_summary(list(improvement.per_env.values()))
    medians = bootstrap_medians(base_scores, new_scores, resamples, rng, score_floor=score_floor)
    ci_low, ci_high = np.percentile(medians, [2.5, 97.5]) if medians.size else (None, None)
    return stats.model_copy(
        update={
            "p25": p25,
            "median": median,
            "p75": p75,
            "bootstrap_mean": float(medians.mean()) if medians.size else None,
            "bootstrap_std": float(medians.std()) if medians.size else None,
            "ci_low": float(ci_low) if ci_low is not None else None,
            "ci_high": float(ci_high) if ci_high is not None else None,
        }
    )
