from __future__ import annotations

import re
from collections import defaultdict
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path

from loguru import logger

from replaylab.schemas.results import ImprovementStats, RunResult
from replaylab.schemas.study import NOISE_SUFFIX, EnvSection, StudyConfig
from replaylab.schemas.variant import COMPONENTS, RAINBOW_N, VariantSpec
from replaylab.services.agent import OfflineRunSpec, RunSpec, collect_dataset, execute
from replaylab.services.schedule import ratio_from
from replaylab.services.stats import improvement_stats
from replaylab.utils.seeding import stats_rng


@dataclass(slots=True)
class StudyOutcome:
    kind: str
    runs: list[RunResult]
    stats: list[ImprovementStats] = field(default_factory=list)
    notes: dict[str, float] = field(default_factory=dict)

    @property
    def diverged(self) -> list[RunResult]:
        return [run for run in self.runs if run.diverged]


@dataclass(frozen=True, slots=True)
class GridCell:
    capacity: int
    oldest_age: int
    ratio: float
    skipped: bool


def env_settings(config: StudyConfig) -> list[tuple[str, EnvSection]]:
    """Every configured environment crossed with every stickiness level."""
    settings: list[tuple[str, EnvSection]] = []
    for label in config.study.envs:
        name = label.removesuffix(NOISE_SUFFIX)
        for sticky in config.study.sticky_levels:
            section = config.env.model_copy(
                update={"name": name, "reward_noise": label.endswith(NOISE_SUFFIX), "sticky": sticky}
            )
            settings.append((f"{label}/sticky{sticky:g}", section))
    return settings


def grid_cells(capacities: Sequence[int], oldest_ages: Sequence[int], min_ratio: float) -> list[GridCell]:
    cells: list[GridCell] = []
    for capacity in capacities:
        for age in oldest_ages:
            ratio = ratio_from(capacity, age)
            cells.append(GridCell(capacity, age, ratio, ratio < min_ratio))
    return cells


def run_all(tasks: Sequence[RunSpec | OfflineRunSpec], workers: int) -> list[RunResult]:
    """Results in task order; runs share nothing, so they parallelize across processes."""
    if workers <= 1 or len(tasks) <= 1:
        return [execute(task) for task in tasks]
    with Pool(processes=min(workers, len(tasks))) as pool:
        return pool.map(execute, tasks, chunksize=1)


def _scores(runs: Sequence[RunResult], predicate: Callable[[RunResult], bool]) -> dict[str, list[float]]:
    scores: dict[str, list[float]] = defaultdict(list)
    for run in runs:
        if predicate(run) and run.final_score is not None and not run.diverged:
            scores[run.env].append(run.final_score)
    return dict(scores)


def _compare(
    config: StudyConfig,
    *,
    group: str,
    variant: str,
    base: dict[str, list[float]],
    new: dict[str, list[float]],
    **cell: int | float | None,
) -> ImprovementStats:
    if not set(base) & set(new):
        logger.warning("Nothing to compare group={group} variant={variant}", group=group, variant=variant)
        return ImprovementStats(group=group, variant=variant, skipped=True, **cell)
    return improvement_stats(
        group=group,
        variant=variant,
        base_scores=base,
        new_scores=new,
        resamples=config.stats.resamples,
        rng=stats_rng(config.study.seed_root, f"{group}/{variant}/{sorted(cell.items())}"),
        score_floor=config.stats.score_floor,
        **cell,
    )


def _specs(
    config: StudyConfig,
    study: str,
    variant: VariantSpec,
    capacity: int,
    *,
    envs: Sequence[tuple[str, EnvSection]],
    mode: str | None = None,
    oldest_age: int | None = None,
) -> list[RunSpec]:
    mode = mode or config.replay.mode
    return [
        RunSpec(
            study=study,
            variant=variant,
            env_label=label,
            env=section,
            capacity=capacity,
            mode=mode,
            ratio=config.replay.ratio,
            oldest_age=oldest_age if oldest_age is not None else config.replay.oldest_age,
            seed=seed,
            config=config,
        )
        for label, section in envs
        for seed in range(config.study.seeds)
    ]


def _capacity_pair(config: StudyConfig, study: str, variants: Sequence[VariantSpec], workers: int) -> StudyOutcome:
    """Each variant at the small and the large capacity; improvement of large over small."""
    envs = env_settings(config)
    small, large = config.replay.capacity, config.replay.capacity_large
    tasks: list[RunSpec] = []
    for variant in variants:
        tasks += _specs(config, study, variant, small, envs=envs)
        tasks += _specs(config, study, variant, large, envs=envs)
    runs = run_all(tasks, workers)
    outcome = StudyOutcome(kind=study, runs=runs)
    for variant in variants:
        name = variant.name
        outcome.stats.append(
            _compare(
                config,
                group=f"{small}->{large}",
                variant=name,
                base=_scores(runs, lambda r: r.variant == name and r.capacity == small),
                new=_scores(runs, lambda r: r.variant == name and r.capacity == large),
                capacity=large,
            )
        )
    return outcome


def additive_study(config: StudyConfig, *, workers: int = 1) -> StudyOutcome:
    base = VariantSpec.dqn()
    variants = [base] + [base.with_component(component, n=RAINBOW_N) for component in COMPONENTS]
    return _capacity_pair(config, "additive", variants, workers)


def ablative_study(config: StudyConfig, *, workers: int = 1) -> StudyOutcome:
    base = VariantSpec.rainbow()
    variants = [base] + [base.without_component(component) for component in COMPONENTS]
    return _capacity_pair(config, "ablative", variants, workers)


def contraction_study(config: StudyConfig, *, workers: int = 1) -> StudyOutcome:
    base = VariantSpec.dqn()
    variants = [
        base,
        base.with_component("nstep", n=RAINBOW_N),
        VariantSpec(n=RAINBOW_N, target="contraction_matched"),
    ]
    return _capacity_pair(config, "contraction", variants, workers)


def _grid_variant(config: StudyConfig) -> VariantSpec:
    return VariantSpec.rainbow() if config.grid.variant == "rainbow" else VariantSpec.dqn()


def capacity_oldest_grid(config: StudyConfig, *, workers: int = 1) -> StudyOutcome:
    """Capacity x oldest-policy grid; each cell against the baseline cell at fixed oldest policy."""
    grid = config.grid
    variant = _grid_variant(config)
    envs = env_settings(config)
    cells = grid_cells(grid.capacities, grid.oldest_ages, grid.min_ratio)
    baseline = GridCell(
        grid.baseline_capacity,
        grid.baseline_oldest_age,
        ratio_from(grid.baseline_capacity, grid.baseline_oldest_age),
        False,
    )
    to_run = [cell for cell in cells if not cell.skipped]
    if all((cell.capacity, cell.oldest_age) != (baseline.capacity, baseline.oldest_age) for cell in to_run):
        to_run.append(baseline)
    tasks: list[RunSpec] = []
    for cell in to_run:
        tasks += _specs(
            config, "grid", variant, cell.capacity, envs=envs, mode="fixed_oldest", oldest_age=cell.oldest_age
        )
    runs = run_all(tasks, workers)
    outcome = StudyOutcome(kind="grid", runs=runs)

    def in_cell(cell: GridCell) -> Callable[[RunResult], bool]:
        return lambda run: run.capacity == cell.capacity and run.oldest_age == cell.oldest_age

    base_scores = _scores(runs, in_cell(baseline))
    for cell in cells:
        if cell.skipped:
            logger.info(
                "Skipping grid cell capacity={capacity} oldest_age={age} ratio={ratio}",
                capacity=cell.capacity,
                age=cell.oldest_age,
                ratio=cell.ratio,
            )
            outcome.stats.append(
                ImprovementStats(
                    group="grid",
                    variant=variant.name,
                    capacity=cell.capacity,
                    oldest_age=cell.oldest_age,
                    ratio=cell.ratio,
                    skipped=True,
                )
            )
            continue
        outcome.stats.append(
            _compare(
                config,
                group="grid",
                variant=variant.name,
                base=base_scores,
                new=_scores(runs, in_cell(cell)),
                capacity=cell.capacity,
                oldest_age=cell.oldest_age,
                ratio=cell.ratio,
            )
        )
    return outcome


def capacity_study(config: StudyConfig, *, workers: int = 1) -> StudyOutcome:
    """Variant at each grid capacity against the default capacity, ratio held fixed."""
    variant = _grid_variant(config)
    envs = env_settings(config)
    baseline = config.replay.capacity
    capacities = sorted(set(config.grid.capacities) | {baseline})
    tasks: list[RunSpec] = []
    for capacity in capacities:
        tasks += _specs(config, "capacity", variant, capacity, envs=envs, mode="fixed_ratio")
    runs = run_all(tasks, workers)
    outcome = StudyOutcome(kind="capacity", runs=runs)
    base_scores = _scores(runs, lambda r: r.capacity == baseline)
    for capacity in capacities:
        outcome.stats.append(
            _compare(
                config,
                group=f"capacity{baseline}",
                variant=variant.name,
                base=base_scores,
                new=_scores(runs, lambda r, c=capacity: r.capacity == c),
                capacity=capacity,
                ratio=config.replay.ratio,
            )
        )
    return outcome


def sticky_study(config: StudyConfig, *, workers: int = 1) -> StudyOutcome:
    """Capacity gains of DQN with n-step targets, with and without sticky actions, for each n."""
    small, large = config.replay.capacity, config.replay.capacity_large
    envs = env_settings(config)
    variants = [
        VariantSpec.dqn() if n == 1 else VariantSpec.dqn().with_component("nstep", n=n)
        for n in config.study.sticky_ns
    ]
    tasks: list[RunSpec] = []
    for variant in variants:
        tasks += _specs(config, "sticky", variant, small, envs=envs)
        tasks += _specs(config, "sticky", variant, large, envs=envs)
    runs = run_all(tasks, workers)
    outcome = StudyOutcome(kind="sticky", runs=runs)
    levels = config.study.sticky_levels
    for variant, n in zip(variants, config.study.sticky_ns, strict=True):
        medians: dict[float, float | None] = {}
        for level in levels:
            suffix = f"/sticky{level:g}"
            name = variant.name

            def matches(run: RunResult, capacity: int, name: str = name, suffix: str = suffix) -> bool:
                return run.variant == name and run.capacity == capacity and run.env.endswith(suffix)

            stats = _compare(
                config,
                group=f"sticky{level:g}",
                variant=name,
                base=_scores(runs, lambda r: matches(r, small)),
                new=_scores(runs, lambda r: matches(r, large)),
                capacity=large,
            )
            outcome.stats.append(stats)
            medians[level] = stats.median
        low, high = min(levels), max(levels)
        if low != high and medians[low] is not None and medians[high] is not None:
            gap = medians[high] - medians[low]
            outcome.notes[f"gap_n{n}"] = gap
            logger.info("Sticky gap n={n} gap={gap:.3f}", n=n, gap=gap)
    return outcome


def _safe_label(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def offline_variants(ns: Sequence[int]) -> list[VariantSpec]:
    variants: list[VariantSpec] = []
    for use_c51 in (False, True):
        for n in ns:
            variant = VariantSpec(use_adam=True, use_c51=use_c51, n=n)
            variants.append(variant)
    return variants


def offline_study(config: StudyConfig, out_dir: Path, *, workers: int = 1) -> StudyOutcome:
    """Offline training for each n, on a given dataset or on datasets collected by a DQN agent."""
    datasets: list[tuple[str, EnvSection, Path]] = []
    collector_runs: list[RunResult] = []
    if config.offline.dataset is not None:
        datasets.append((config.env.label, config.env, Path(config.offline.dataset)))
    else:
        collect_config = config.model_copy(
            update={
                "budget": config.budget.model_copy(update={"gradient_steps": config.offline.collect_gradient_steps})
            }
        )
        suffix = ".jsonl" if config.offline.format == "jsonl" else ".bin"
        for label, section in env_settings(config):
            spec = _specs(
                collect_config, "offline-collect", VariantSpec.dqn(), config.replay.capacity, envs=[(label, section)]
            )[0]
            result, path = collect_dataset(spec, out_dir / "datasets" / f"{_safe_label(label)}{suffix}")
            collector_runs.append(result)
            datasets.append((label, section, path))

    variants = offline_variants(config.offline.ns)
    tasks = [
        OfflineRunSpec(
            study="offline",
            variant=variant,
            env_label=label,
            env=section,
            dataset_path=str(path),
            seed=seed,
            config=config,
        )
        for variant in variants
        for label, section, path in datasets
        for seed in range(config.study.seeds)
    ]
    runs = run_all(tasks, workers)
    outcome = StudyOutcome(kind="offline", runs=collector_runs + runs)
    collector_scores = _scores(collector_runs, lambda r: True)
    shortest = min(config.offline.ns)
    for variant in variants:
        name = variant.name
        new = _scores(runs, lambda r, name=name: r.variant == name)
        if collector_scores:
            outcome.stats.append(_compare(config, group="vs_collector", variant=name, base=collector_scores, new=new))
        if variant.n != shortest:
            reference = variant.model_copy(update={"n": shortest}).name
            outcome.stats.append(
                _compare(
                    config,
                    group=f"vs_n{shortest}",
                    variant=name,
                    base=_scores(runs, lambda r, ref=reference: r.variant == ref),
                    new=new,
                )
            )
    return outcome


def train_study(config: StudyConfig, out_dir: Path, *, workers: int = 1) -> StudyOutcome:
    variant = config.agent.variant_spec()
    label = config.env.label
    checkpoints = out_dir / "checkpoints"
    tasks = [
        spec.model_copy(update={"checkpoint_path": str(checkpoints / f"{_safe_label(variant.name)}_seed{spec.seed}.qf")})
        for spec in _specs(config, "train", variant, config.replay.capacity, envs=[(label, config.env)])
    ]
    return StudyOutcome(kind="train", runs=run_all(tasks, workers))


def run_study(config: StudyConfig, out_dir: Path, *, workers: int = 1) -> StudyOutcome:
    logger.info(
        "Running study kind={kind} seeds={seeds} workers={workers}",
        kind=config.study.kind,
        seeds=config.study.seeds,
        workers=workers,
    )
    match config.study.kind:
        case "train":
            return train_study(config, out_dir, workers=workers)
        case "grid":
            return capacity_oldest_grid(config, workers=workers)
        case "additive":
            return additive_study(config, workers=workers)
        case "ablative":
            return ablative_study(config, workers=workers)
        case "sticky":
            return sticky_study(config, workers=workers)
        case "contraction":
            return contraction_study(config, workers=workers)
        case "capacity":
            return capacity_study(config, workers=workers)
        case "offline":
            return offline_study(config, out_dir, workers=workers)
        case _:
            raise ValueError(f"Unknown study kind: {config.study.kind}")
