from __future__ import annotations

import numpy as np
import pytest

from replaylab.models.qfunction import QFunction
from replaylab.schemas.study import ReplaySection
from replaylab.services.agent import select_action
from replaylab.services.replay import ReplayBuffer, Transition
from replaylab.services.schedule import EpsilonSchedule, ReplayControl, default_warmup, epsilon, ratio_from


@pytest.mark.parametrize(
    ("capacity", "oldest_age", "expected"),
    [(1_000_000, 250_000, 0.25), (10_000_000, 250_000, 0.025), (100_000, 25_000_000, 250.0)],
)
def test_ratio_from(capacity, oldest_age, expected):
    assert ratio_from(capacity, oldest_age) == expected


def test_ratio_from_rejects_non_positive_inputs():
    with pytest.raises(ValueError):
        ratio_from(0, 10)


def test_quarter_ratio_is_one_update_every_four_steps():
    control = ReplayControl(mode="fixed_ratio", capacity=100, ratio=0.25)
    for env_steps in range(1, 100_001):
        assert control.updates_due(env_steps) == (1 if env_steps % 4 == 0 else 0)
    assert control.issued == 25_000


def test_ratio_above_one():
    control = ReplayControl(mode="fixed_ratio", capacity=100, ratio=2.0)
    assert [control.updates_due(step) for step in range(1, 6)] == [2, 2, 2, 2, 2]


def test_fractional_ratio_accumulates():
    control = ReplayControl(mode="fixed_ratio", capacity=100, ratio=0.3)
    assert sum(control.updates_due(step) for step in range(1, 11)) == 3


def test_long_runs_do_not_drift():
    control = ReplayControl(mode="fixed_ratio", capacity=100, ratio=0.1)
    total = sum(control.updates_due(step) for step in range(1, 100_001))
    assert total == 10_000


def test_warmup_and_refund():
    control = ReplayControl(mode="fixed_ratio", capacity=100, ratio=0.25, warmup=10)
    assert [control.updates_due(step) for step in range(1, 14)] == [0] * 13
    assert control.updates_due(14) == 1

    control.refund(1)
    assert control.updates_due(15) == 1
    assert control.expected_env_steps(100) == 410


def test_fixed_oldest_sets_the_ratio():
    control = ReplayControl(mode="fixed_oldest", capacity=5000, oldest_age=1250)
    assert control.ratio == 0.25
    assert control.target_oldest_age == 1250.0

    with pytest.raises(ValueError):
        ReplayControl(mode="fixed_oldest", capacity=5000)


def test_from_section_defaults_the_warmup():
    section = ReplaySection(capacity=5000, batch_size=32)
    assert ReplayControl.from_section(section).warmup == 500
    assert ReplayControl.from_section(section, capacity=100).warmup == 100
    assert default_warmup(256, 5000) == 1024


def test_fixed_oldest_steady_state_age():
    capacity, target = 5000, 1250
    control = ReplayControl(mode="fixed_oldest", capacity=capacity, oldest_age=target)
    buffer = ReplayBuffer(capacity, obs_dim=1, num_actions=1)
    gradient_steps = 0
    observation = np.zeros(1)
    for env_steps in range(1, 2 * capacity + 1):
        buffer.insert(
            Transition(
                state=observation,
                action=0,
                reward=0.0,
                next_state=observation,
                terminal=False,
                policy_stamp=gradient_steps,
                env_step=env_steps,
                episode_id=0,
            )
        )
        gradient_steps += control.updates_due(env_steps)
        if env_steps >= capacity:
            assert abs(buffer.oldest_policy_age(gradient_steps) - target) <= 1


def test_epsilon_schedule():
    schedule = EpsilonSchedule(1.0, 0.05, 100)
    assert epsilon(0, schedule) == 1.0
    assert epsilon(100, schedule) == 0.05
    assert epsilon(10_000, schedule) == 0.05
    assert epsilon(50, schedule) == pytest.approx((1.0 + 0.05) / 2)
    assert EpsilonSchedule(1.0, 0.05, 0).value(0) == 0.05


def test_random_actions_match_epsilon_in_expectation():
    qf = QFunction("tabular", obs_dim=3, num_actions=4)
    rng = np.random.default_rng(0)
    count, eps = 2000, 0.1
    explored = sum(select_action(qf, np.eye(3)[0], eps, rng)[1] for _ in range(count))
    sigma = np.sqrt(count * eps * (1 - eps))
    assert abs(explored - count * eps) <= 3 * sigma
