from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest

from replaylab.schemas.study import StudyConfig
from replaylab.services.replay import ReplayBuffer, Transition

TransitionFactory = Callable[..., Transition]


@pytest.fixture
def make_transition() -> TransitionFactory:
    def factory(
        index: int,
        *,
        episode: int = 0,
        reward: float | None = None,
        terminal: bool = False,
        truncated: bool = False,
        stamp: int | None = None,
        action: int = 0,
        obs_dim: int = 2,
    ) -> Transition:
        state = np.zeros(obs_dim)
        state[0] = index
        next_state = np.zeros(obs_dim)
        next_state[0] = index + 1
        return Transition(
            state=state,
            action=action,
            reward=float(index) if reward is None else reward,
            next_state=next_state,
            terminal=terminal,
            policy_stamp=index if stamp is None else stamp,
            env_step=index,
            episode_id=episode,
            truncated=truncated,
        )

    return factory


@pytest.fixture
def episode_log() -> Callable[[np.random.Generator, int], list[Transition]]:
    """Random transition log: episodes end in a terminal, a truncation, or run past the end."""

    def factory(rng: np.random.Generator, length: int) -> list[Transition]:
        log: list[Transition] = []
        episode = 0
        step_in_episode = 0
        episode_length = int(rng.integers(1, 9))
        ending = rng.choice(["terminal", "truncated"])
        for index in range(length):
            step_in_episode += 1
            last = step_in_episode == episode_length
            log.append(
                Transition(
                    state=np.array([float(index), rng.normal()]),
                    action=int(rng.integers(0, 3)),
                    reward=float(np.round(rng.normal(), 3)),
                    next_state=np.array([float(index + 1), rng.normal()]),
                    terminal=bool(last and ending == "terminal"),
                    policy_stamp=index // 3,
                    env_step=index,
                    episode_id=episode,
                    truncated=bool(last and ending == "truncated"),
                )
            )
            if last:
                episode += 1
                step_in_episode = 0
                episode_length = int(rng.integers(1, 9))
                ending = rng.choice(["terminal", "truncated"])
        return log

    return factory


@pytest.fixture
def fill_buffer() -> Callable[[list[Transition], int], ReplayBuffer]:
    def factory(log: list[Transition], capacity: int) -> ReplayBuffer:
        buffer = ReplayBuffer(capacity, obs_dim=log[0].state.size, num_actions=3)
        buffer.extend(log)
        return buffer

    return factory


@pytest.fixture
def tiny_config() -> Callable[..., StudyConfig]:
    """Desk-second study config on the chain environment."""

    def factory(**sections: dict) -> StudyConfig:
        tree: dict[str, dict] = {
            "study": {"envs": ["chain"], "sticky_levels": [0.0], "seeds": 2, "seed_root": 7},
            "env": {"name": "chain"},
            "replay": {"capacity": 200, "capacity_large": 400, "batch_size": 8, "ratio": 0.5, "warmup": 20},
            "agent": {
                "approximator": "tabular",
                "gamma": 0.9,
                "eval_episodes": 3,
                "eval_epsilon": 0.5,
                "target_sync": 20,
                "atoms": 11,
            },
            "budget": {"gradient_steps": 100, "iteration_steps": 50},
            "stats": {"resamples": 50},
            "grid": {
                "capacities": [100, 200],
                "oldest_ages": [50, 100],
                "baseline_capacity": 200,
                "baseline_oldest_age": 100,
                "min_ratio": 0.3,
            },
            "offline": {"collect_gradient_steps": 100, "ns": [1, 3]},
        }
        for name, values in sections.items():
            tree.setdefault(name, {}).update(values)
        return StudyConfig.model_validate(tree)

    return factory
