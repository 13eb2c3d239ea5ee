from __future__ import annotations

import numpy as np
import pytest

from replaylab.core.errors import DivergenceError
from replaylab.models.qfunction import CategoricalSupport, QFunction
from replaylab.schemas.variant import TargetSpec
from replaylab.services.envs import chain, gridworld, value_iteration
from replaylab.services.learner import (
    Learner,
    TargetNetwork,
    c51_loss_and_grad,
    c51_project,
    huber,
    td_loss_and_grad,
)
from replaylab.services.optim import SGD, Adam
from replaylab.services.replay import ReplayBuffer, Transition
from replaylab.services.sampler import SampleBatch


def full_coverage_buffer(env) -> ReplayBuffer:
    """Every (state, action) of the model stored once, each as its own one-step episode."""
    terminals = env.terminal_states()
    pairs = [(s, a) for s in env.open_states() if s not in terminals for a in range(env.num_actions)]
    buffer = ReplayBuffer(len(pairs), obs_dim=env.obs_dim, num_actions=env.num_actions)
    for index, (state, action) in enumerate(pairs):
        outcome = env.model(state, action)
        buffer.insert(
            Transition(
                state=env.observe(state),
                action=action,
                reward=outcome.reward,
                next_state=env.observe(outcome.next_state),
                terminal=outcome.terminal,
                policy_stamp=0,
                env_step=index,
                episode_id=index,
            )
        )
    return buffer


def whole_buffer(buffer: ReplayBuffer) -> SampleBatch:
    size = buffer.size
    return SampleBatch(indices=np.arange(size), is_weights=np.ones(size), probabilities=np.full(size, 1.0 / size))


def test_huber_is_quadratic_then_linear():
    np.testing.assert_array_equal(huber(np.array([0.0, 0.5, -2.0, 3.0])), [0.0, 0.125, 1.5, 2.5])


def test_zero_error_gives_zero_loss_and_gradient():
    rng = np.random.default_rng(0)
    qf = QFunction("linear", obs_dim=3, num_actions=2, rng=rng)
    states = rng.normal(size=(5, 3))
    actions = rng.integers(0, 2, size=5)
    targets = qf.predict(states)[np.arange(5), actions]

    loss, grad, errors = td_loss_and_grad(qf, states, actions, targets, np.ones(5))
    assert loss == 0.0
    np.testing.assert_array_equal(grad, 0.0)
    np.testing.assert_array_equal(errors, 0.0)


@pytest.mark.parametrize("weight", [1.0, 0.5])
def test_single_linear_parameter_gradient(weight):
    qf = QFunction("linear", obs_dim=1, num_actions=1)
    qf.set_params(np.array([2.0, 0.0]))

    loss, grad, errors = td_loss_and_grad(qf, np.array([[1.5]]), np.array([0]), np.array([2.5]), np.array([weight]))
    assert errors.tolist() == [0.5]
    assert loss == pytest.approx(weight * 0.125)
    np.testing.assert_allclose(grad, [weight * 0.5 * 1.5, weight * 0.5])


def test_non_finite_targets_signal_divergence():
    qf = QFunction("linear", obs_dim=1, num_actions=1)
    with pytest.raises(DivergenceError):
        td_loss_and_grad(qf, np.array([[1.0]]), np.array([0]), np.array([np.nan]), np.ones(1))


def test_projection_examples():
    support = CategoricalSupport(0.0, 2.0, num_atoms=3)
    at_zero = np.array([1.0, 0.0, 0.0])

    np.testing.assert_array_equal(c51_project(support, np.array([0.0, 1.0, 0.0]), 0.0, 1.0), [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(c51_project(support, at_zero, 1.0, 1.0), [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(c51_project(support, at_zero, 0.5, 1.0), [0.5, 0.5, 0.0])


def test_projection_clamps_to_the_support():
    support = CategoricalSupport(0.0, 2.0, num_atoms=3)
    np.testing.assert_array_equal(c51_project(support, np.array([0.2, 0.3, 0.5]), 10.0, 1.0), [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(c51_project(support, np.array([0.2, 0.3, 0.5]), -10.0, 0.0), [1.0, 0.0, 0.0])


def test_projection_conserves_mass():
    rng = np.random.default_rng(1)
    support = CategoricalSupport(-10.0, 10.0, num_atoms=51)
    probabilities = rng.dirichlet(np.ones(51), size=500)
    projected = c51_project(support, probabilities, rng.uniform(-20, 20, size=500), rng.uniform(0, 1, size=500))

    np.testing.assert_allclose(projected.sum(axis=1), 1.0, atol=1e-9)
    assert projected.min() >= 0.0


def test_projection_shifts_the_mean_when_unclamped():
    rng = np.random.default_rng(2)
    support = CategoricalSupport(-10.0, 10.0, num_atoms=51)
    probabilities = rng.dirichlet(np.ones(51), size=200)
    rewards = rng.uniform(-1, 1, size=200)
    discounts = rng.uniform(0, 0.5, size=200)

    projected = c51_project(support, probabilities, rewards, discounts)
    expected = rewards + discounts * (probabilities @ support.atoms)
    np.testing.assert_allclose(projected @ support.atoms, expected, atol=1e-9)


def test_cross_entropy_against_own_prediction():
    rng = np.random.default_rng(3)
    qf = QFunction("linear", obs_dim=3, num_actions=2, support=CategoricalSupport(-1.0, 1.0, 5), rng=rng)
    states = rng.normal(size=(4, 3))
    actions = rng.integers(0, 2, size=4)
    projected = qf.predict(states)[np.arange(4), actions]

    loss, grad, _ = c51_loss_and_grad(qf, states, actions, projected, np.ones(4))
    entropy = -np.sum(projected * np.log(projected), axis=1).mean()
    assert loss == pytest.approx(entropy, rel=1e-12)
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)


def test_cross_entropy_of_a_one_hot_target():
    rng = np.random.default_rng(4)
    qf = QFunction("mlp", obs_dim=3, num_actions=2, hidden=6, support=CategoricalSupport(-1.0, 1.0, 5), rng=rng)
    state = rng.normal(size=(1, 3))
    target = np.zeros((1, 5))
    target[0, 2] = 1.0

    loss, _, _ = c51_loss_and_grad(qf, state, np.array([1]), target, np.array([0.7]))
    assert loss == pytest.approx(-0.7 * np.log(qf.predict(state)[0, 1, 2]))


def test_target_network_sync_schedule():
    online = QFunction("linear", obs_dim=2, num_actions=2, rng=np.random.default_rng(5))
    target = TargetNetwork(online, sync_period=3)
    state = np.array([0.3, -0.7])
    np.testing.assert_array_equal(target.network.q_values(state), online.q_values(state))

    frozen = target.network.q_values(state)
    online.set_params(online.params + 1.0)
    assert not target.maybe_sync(1)
    assert not target.maybe_sync(2)
    np.testing.assert_array_equal(target.network.q_values(state), frozen)

    assert target.maybe_sync(3)
    np.testing.assert_array_equal(target.network.q_values(state), online.q_values(state))
    assert target.next_sync == 6


def test_learner_with_unit_sync_period_trails_by_one_step():
    env = chain()
    buffer = full_coverage_buffer(env)
    qf = QFunction("tabular", obs_dim=env.obs_dim, num_actions=env.num_actions)
    learner = Learner(qf, Adam(1e-2), TargetSpec(gamma=0.9), sync_period=1)
    for _ in range(5):
        learner.learn(buffer, whole_buffer(buffer))
        np.testing.assert_array_equal(learner.target.network.params, qf.params)


def test_explicit_sync_restarts_the_period():
    env = chain()
    buffer = full_coverage_buffer(env)
    qf = QFunction("tabular", obs_dim=env.obs_dim, num_actions=env.num_actions)
    learner = Learner(qf, SGD(1.0), TargetSpec(gamma=0.9), sync_period=10)
    for _ in range(4):
        learner.learn(buffer, whole_buffer(buffer))
    assert not np.array_equal(learner.target.network.params, qf.params)

    learner.sync_target()

    np.testing.assert_array_equal(learner.target.network.params, qf.params)
    assert learner.target.next_sync == 14


@pytest.mark.parametrize("make_env", [chain, gridworld])
def test_tabular_learning_reaches_optimal_values(make_env):
    env = make_env()
    gamma = 0.9
    buffer = full_coverage_buffer(env)
    qf = QFunction("tabular", obs_dim=env.obs_dim, num_actions=env.num_actions)
    # full-batch steps with lr = batch size replace every entry by its target
    learner = Learner(qf, SGD(float(buffer.size)), TargetSpec(gamma=gamma), sync_period=1)
    for _ in range(400):
        learner.learn(buffer, whole_buffer(buffer))

    reference = value_iteration(env, gamma)
    states = [s for s in env.open_states() if s not in env.terminal_states()]
    learned = qf.params.reshape(env.obs_dim, env.num_actions)
    assert np.abs(learned[states] - reference[states]).max() < 1e-6
    for state in states:
        greedy = int(np.argmax(learned[state]))
        assert reference[state, greedy] == pytest.approx(reference[state].max(), abs=1e-9)


def test_categorical_learner_step_reports_cross_entropy_priorities():
    env = chain()
    buffer = full_coverage_buffer(env)
    qf = QFunction(
        "tabular",
        obs_dim=env.obs_dim,
        num_actions=env.num_actions,
        support=CategoricalSupport(0.0, 1.0, 11),
    )
    learner = Learner(qf, Adam(1e-2), TargetSpec(gamma=0.9), sync_period=10)
    batch = whole_buffer(buffer)

    first = learner.learn(buffer, batch)
    for _ in range(200):
        last = learner.learn(buffer, batch)

    assert first.priorities.shape == (buffer.size,)
    assert np.all(first.priorities > 0)
    assert last.loss < first.loss
