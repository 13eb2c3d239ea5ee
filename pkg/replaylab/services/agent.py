from __future__ import annotations

import math
from collections.abc import Callable
from pathlib import Path
from typing import Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from replaylab.core.errors import DivergenceError, EmptyBufferError, EmptyMeasureError
from replaylab.models.qfunction import CategoricalSupport, QFunction
from replaylab.schemas.results import RunResult
from replaylab.schemas.study import EnvSection, StudyConfig
from replaylab.schemas.variant import VariantSpec
from replaylab.services.datasets import load_buffer, write_dataset
from replaylab.services.envs import Environment, StickyActions, make_env, unwrap
from replaylab.services.learner import Learner
from replaylab.services.optim import make_optimizer
from replaylab.services.replay import ReplayBuffer, Transition
from replaylab.services.sampler import make_sampler
from replaylab.services.schedule import EpsilonSchedule, ReplayControl
from replaylab.utils.seeding import run_streams

TransitionSink = Callable[[Transition], None]


class RunSpec(BaseModel):
    """Everything one online run needs; picklable so it can cross into a worker process."""

    model_config = ConfigDict(frozen=True)

    study: str
    variant: VariantSpec
    env_label: str
    env: EnvSection
    capacity: int
    mode: Literal["fixed_ratio", "fixed_oldest"] = "fixed_ratio"
    ratio: float | None = None
    oldest_age: int | None = None
    seed: int
    config: StudyConfig
    checkpoint_path: str | None = None


class OfflineRunSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    study: str
    variant: VariantSpec
    env_label: str
    env: EnvSection
    dataset_path: str
    seed: int
    config: StudyConfig


def build_qfunction(
    config: StudyConfig,
    variant: VariantSpec,
    env: Environment | StickyActions,
    rng: np.random.Generator,
) -> QFunction:
    agent = config.agent
    support = None
    if variant.use_c51:
        low, high = unwrap(env).return_range()
        support = CategoricalSupport(
            agent.v_min if agent.v_min is not None else low,
            agent.v_max if agent.v_max is not None else high,
            agent.atoms,
        )
    return QFunction(agent.approximator, env.obs_dim, env.num_actions, hidden=agent.hidden, support=support, rng=rng)


def select_action(
    qf: QFunction,
    observation: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
) -> tuple[int, bool]:
    """Epsilon-greedy action and whether it was the random branch."""
    if rng.random() < epsilon:
        return int(rng.integers(qf.num_actions)), True
    return int(np.argmax(qf.action_values(observation)[0])), False


def evaluate(
    qf: QFunction,
    env: Environment | StickyActions,
    *,
    episodes: int,
    epsilon: float,
    gamma: float,
    rng: np.random.Generator,
) -> float:
    """Mean discounted return of near-greedy episodes; no learning happens here."""
    total = 0.0
    for _ in range(episodes):
        observation = env.reset()
        discount = 1.0
        done = False
        while not done:
            action, _ = select_action(qf, observation, epsilon, rng)
            step = env.step(action)
            total += discount * step.reward
            discount *= gamma
            observation = step.observation
            done = step.terminal or step.truncated
    return total / episodes


def final_score(returns: list[float], fraction: float) -> float | None:
    if not returns:
        return None
    tail = max(1, math.ceil(fraction * len(returns)))
    return float(np.mean(returns[-tail:]))


def run_agent(spec: RunSpec, transition_sink: TransitionSink | None = None) -> RunResult:
    config = spec.config
    streams = run_streams(config.study.seed_root, spec.seed)
    env = make_env(spec.env, streams.env)
    eval_env = make_env(spec.env, streams.eval)
    variant = spec.variant
    gamma = config.agent.gamma
    target_spec = variant.target_spec(gamma)
    qf = build_qfunction(config, variant, env, streams.init)
    learner = Learner(
        qf,
        make_optimizer(config.optim, use_adam=variant.use_adam),
        target_spec,
        sync_period=config.agent.target_sync,
    )
    buffer = ReplayBuffer(spec.capacity, env.obs_dim, env.num_actions)
    sampler = make_sampler(buffer, target_spec.horizon, prioritized=variant.use_per, section=config.sampler)
    control = ReplayControl.from_section(
        config.replay, capacity=spec.capacity, mode=spec.mode, ratio=spec.ratio, oldest_age=spec.oldest_age
    )
    budget = config.budget.gradient_steps
    iteration_steps = config.budget.iteration_steps
    schedule = EpsilonSchedule(
        config.agent.epsilon_start,
        config.agent.epsilon_end,
        int(config.agent.epsilon_fraction * control.expected_env_steps(budget)),
    )
    rng = streams.agent
    returns: list[float] = []
    env_steps = 0
    diagnostic: str | None = None
    diverged = False
    # bound for runs where nothing ever becomes sampleable
    env_step_limit = 10 * control.expected_env_steps(budget)

    logger.info(
        "Starting run study={study} variant={variant} env={env} capacity={capacity} ratio={ratio} seed={seed}",
        study=spec.study,
        variant=variant.name,
        env=spec.env_label,
        capacity=spec.capacity,
        ratio=control.ratio,
        seed=spec.seed,
    )

    def checkpoint_eval() -> None:
        returns.append(
            evaluate(
                qf,
                eval_env,
                episodes=config.agent.eval_episodes,
                epsilon=config.agent.eval_epsilon,
                gamma=gamma,
                rng=rng,
            )
        )

    try:
        observation = env.reset()
        episode = 0
        while learner.steps < budget:
            if env_steps >= env_step_limit:
                diagnostic = f"stalled after {env_steps} env steps at gradient step {learner.steps}"
                logger.warning(
                    "Run stalled variant={variant} env={env} seed={seed}",
                    variant=variant.name,
                    env=spec.env_label,
                    seed=spec.seed,
                )
                break
            action, _ = select_action(qf, observation, schedule.value(env_steps), rng)
            step = env.step(action)
            transition = Transition(
                state=observation,
                action=action,
                reward=step.reward,
                next_state=step.observation,
                terminal=step.terminal,
                policy_stamp=learner.steps,
                env_step=env_steps,
                episode_id=episode,
                truncated=step.truncated,
            )
            buffer.insert(transition)
            if transition_sink is not None:
                transition_sink(transition)
            env_steps += 1
            if step.terminal or step.truncated:
                observation = env.reset()
                episode += 1
            else:
                observation = step.observation
            due = control.updates_due(env_steps)
            for done_updates in range(due):
                try:
                    batch = sampler.sample(config.replay.batch_size, rng)
                except (EmptyBufferError, EmptyMeasureError):
                    control.refund(due - done_updates)
                    break
                learned = learner.learn(buffer, batch)
                sampler.update_priorities(batch.indices, learned.priorities)
                if learner.steps % iteration_steps == 0:
                    checkpoint_eval()
                if learner.steps >= budget:
                    break
        if budget > 0 and budget % iteration_steps:
            checkpoint_eval()
    except DivergenceError as exc:
        diverged = True
        diagnostic = str(exc)
        logger.warning(
            "Run diverged variant={variant} env={env} seed={seed} step={step}: {error}",
            variant=variant.name,
            env=spec.env_label,
            seed=spec.seed,
            step=learner.steps,
            error=diagnostic,
        )

    if spec.checkpoint_path is not None and not diverged:
        Path(spec.checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
        qf.save(Path(spec.checkpoint_path))

    result = RunResult(
        study=spec.study,
        variant=variant.name,
        env=spec.env_label,
        capacity=spec.capacity,
        oldest_age=control.oldest_age if control.mode == "fixed_oldest" else None,
        ratio=control.ratio,
        seed=spec.seed,
        returns=returns,
        final_score=final_score(returns, config.budget.final_fraction),
        env_steps=env_steps,
        gradient_steps=learner.steps,
        diverged=diverged,
        diagnostic=diagnostic,
        buffer=buffer.stats(learner.steps) if buffer.size else None,
    )
    logger.info(
        "Finished run variant={variant} env={env} seed={seed} final_score={score} env_steps={env_steps}",
        variant=result.variant,
        env=result.env,
        seed=result.seed,
        score=result.final_score,
        env_steps=result.env_steps,
    )
    return result


def offline_train(spec: OfflineRunSpec) -> RunResult:
    """Train from a fixed dataset; the live environment is touched only for frozen-policy evaluation."""
    config = spec.config
    streams = run_streams(config.study.seed_root, spec.seed)
    buffer = load_buffer(Path(spec.dataset_path), fmt=config.offline.format)
    eval_env = make_env(spec.env, streams.eval)
    if (eval_env.obs_dim, eval_env.num_actions) != (buffer.obs_dim, buffer.num_actions):
        raise ValueError(
            f"dataset shape ({buffer.obs_dim}, {buffer.num_actions}) does not match env {spec.env_label}"
        )
    variant = spec.variant
    gamma = config.agent.gamma
    target_spec = variant.target_spec(gamma)
    qf = build_qfunction(config, variant, eval_env, streams.init)
    learner = Learner(
        qf,
        make_optimizer(config.optim, use_adam=variant.use_adam),
        target_spec,
        sync_period=config.agent.target_sync,
    )
    sampler = make_sampler(buffer, target_spec.horizon, prioritized=variant.use_per, section=config.sampler)
    rng = streams.agent
    budget = config.budget.gradient_steps
    iteration_steps = config.budget.iteration_steps
    diagnostic: str | None = None

    def checkpoint_eval() -> float:
        return evaluate(
            qf,
            eval_env,
            episodes=config.agent.eval_episodes,
            epsilon=config.agent.eval_epsilon,
            gamma=gamma,
            rng=rng,
        )

    returns = [checkpoint_eval()]
    try:
        while learner.steps < budget:
            batch = sampler.sample(config.replay.batch_size, rng)
            learned = learner.learn(buffer, batch)
            sampler.update_priorities(batch.indices, learned.priorities)
            if learner.steps % iteration_steps == 0 or learner.steps == budget:
                returns.append(checkpoint_eval())
    except DivergenceError as exc:
        diagnostic = str(exc)
        logger.warning(
            "Offline run diverged variant={variant} seed={seed}: {error}",
            variant=variant.name,
            seed=spec.seed,
            error=diagnostic,
        )

    # dataset stamps count the collector's gradient steps, not this learner's
    collector_step = int(buffer.policy_stamps[: buffer.size].max())
    return RunResult(
        study=spec.study,
        variant=variant.name,
        env=spec.env_label,
        capacity=buffer.capacity,
        ratio=0.0,
        seed=spec.seed,
        returns=returns,
        final_score=final_score(returns, config.budget.final_fraction),
        env_steps=0,
        gradient_steps=learner.steps,
        diverged=diagnostic is not None,
        diagnostic=diagnostic,
        buffer=buffer.stats(collector_step),
    )


def collect_dataset(spec: RunSpec, path: Path) -> tuple[RunResult, Path]:
    """Run the collecting agent and write every transition it generated."""
    log: list[Transition] = []
    result = run_agent(spec, transition_sink=log.append)
    env = make_env(spec.env, np.random.default_rng(0))
    written = write_dataset(
        path, log, obs_dim=env.obs_dim, num_actions=env.num_actions, fmt=spec.config.offline.format
    )
    return result, written


def execute(task: RunSpec | OfflineRunSpec) -> RunResult:
    if isinstance(task, OfflineRunSpec):
        return offline_train(task)
    return run_agent(task)
