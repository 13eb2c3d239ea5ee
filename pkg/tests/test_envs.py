from __future__ import annotations

import numpy as np
import pytest

from replaylab.core.errors import EnvironmentStateError
from replaylab.schemas.study import EnvSection
from replaylab.services.envs import (
    DOWN,
    FOUR_ROOMS_OPTIMAL_STEPS,
    LEFT,
    RIGHT,
    SPARSE_MAZE_CAP,
    SPARSE_MAZE_OPTIMAL_STEPS,
    UP,
    StickyActions,
    bfs_distance,
    chain,
    gridworld,
    make_env,
    sparse_maze,
    unwrap,
    value_iteration,
)


def test_walls_block_movement():
    env = gridworld()
    env.reset()
    result = env.step(UP)
    assert result.observation.argmax() == env.start_state
    assert result.reward == 0.0

    env.state = env.index((0, 4))
    result = env.step(RIGHT)
    assert env.cell(int(result.observation.argmax())) == (0, 4)
    assert not result.terminal


def test_goal_ends_the_episode():
    env = gridworld()
    env.reset()
    env.state = env.index((10, 9))
    result = env.step(RIGHT)

    assert result.reward == 1.0
    assert result.terminal and not result.truncated
    with pytest.raises(EnvironmentStateError):
        env.step(LEFT)


def test_step_before_reset_raises():
    with pytest.raises(EnvironmentStateError):
        chain().step(1)


def test_bfs_distances_are_documented():
    assert bfs_distance(gridworld()) == FOUR_ROOMS_OPTIMAL_STEPS == 20
    assert bfs_distance(sparse_maze()) == SPARSE_MAZE_OPTIMAL_STEPS == 70
    assert bfs_distance(chain()) == 4


def test_observations_are_one_hot():
    env = sparse_maze()
    observation = env.reset()
    assert observation.shape == (225,)
    assert observation.sum() == 1.0


def test_episode_cap_truncates():
    env = sparse_maze()
    env.reset()
    for _ in range(SPARSE_MAZE_CAP - 1):
        assert not env.step(UP).truncated
    result = env.step(UP)
    assert result.truncated and not result.terminal


def test_random_policy_rarely_solves_the_maze():
    env = sparse_maze()
    rng = np.random.default_rng(0)
    episodes = 2000
    successes = 0
    for _ in range(episodes):
        env.reset()
        while True:
            result = env.step(int(rng.integers(0, 4)))
            if result.terminal:
                successes += 1
            if result.terminal or result.truncated:
                break
    assert successes / episodes < 0.05


def test_same_seed_same_noisy_trajectory():
    def rewards(seed: int) -> list[float]:
        env = make_env(EnvSection(name="chain", reward_noise=True), np.random.default_rng(seed))
        collected = []
        for _ in range(20):
            env.reset()
            for _ in range(3):
                env.step(1)
            collected.append(env.step(1).reward)
        return collected

    assert rewards(3) == rewards(3)
    assert rewards(3) != rewards(4)


def test_noise_is_only_on_the_goal():
    env = chain(reward_noise=True, rng=np.random.default_rng(0))
    env.reset()
    assert [env.step(1).reward for _ in range(3)] == [0.0, 0.0, 0.0]
    assert env.step(1).reward != 1.0


def test_sticky_zero_executes_the_requested_action():
    env = StickyActions(chain(), 0.0, np.random.default_rng(0))
    env.reset()
    assert env.step(1).observation.argmax() == 1
    assert env.step(0).observation.argmax() == 0
    assert not env.repeated


def test_sticky_one_repeats_the_first_action():
    env = StickyActions(gridworld(), 1.0, np.random.default_rng(0))
    env.reset()
    env.step(DOWN)
    for action in (UP, LEFT, RIGHT, UP):
        env.step(action)
        assert env.last_action == DOWN
        assert env.repeated


def test_sticky_repeat_frequency():
    env = StickyActions(gridworld(), 0.25, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    env.reset()
    eligible = repeats = 0
    for _ in range(100_000):
        had_previous = env.last_action is not None
        result = env.step(int(rng.integers(0, 4)))
        if had_previous:
            eligible += 1
            repeats += env.repeated
        if result.terminal or result.truncated:
            env.reset()
    assert repeats / eligible == pytest.approx(0.25, abs=0.01)


def test_sticky_actions_increase_return_variance():
    def returns(stickiness: float) -> np.ndarray:
        env = make_env(EnvSection(name="chain", sticky=stickiness), np.random.default_rng(5))
        rng = np.random.default_rng(6)
        totals = []
        for _ in range(10_000):
            env.reset()
            discount, total = 1.0, 0.0
            while True:
                action = int(rng.integers(0, 2)) if rng.random() < 0.2 else 1
                result = env.step(action)
                total += discount * result.reward
                discount *= 0.9
                if result.terminal or result.truncated:
                    break
            totals.append(total)
        return np.array(totals)

    assert returns(0.25).var() > returns(0.0).var()


def test_make_env_wraps_only_when_sticky():
    rng = np.random.default_rng(0)
    plain = make_env(EnvSection(name="gridworld"), rng)
    sticky = make_env(EnvSection(name="gridworld", sticky=0.25), rng)

    assert not isinstance(plain, StickyActions)
    assert isinstance(sticky, StickyActions)
    assert sticky.obs_dim == plain.obs_dim == 121
    assert unwrap(sticky).name == "gridworld"


def test_value_iteration_on_the_chain():
    q = value_iteration(chain(), 0.9)
    for state in range(4):
        assert q[state, 1] == pytest.approx(0.9 ** (3 - state))
    assert q[4].tolist() == [0.0, 0.0]


def test_return_range_covers_noise():
    assert chain().return_range() == (0.0, 1.0)
    low, high = chain(reward_noise=True, noise_sigma=0.5).return_range()
    assert low < 0.0 and high > 1.0
