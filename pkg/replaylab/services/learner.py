from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from replaylab.core.errors import DivergenceError
from replaylab.models.qfunction import CategoricalSupport, QFunction, log_softmax, softmax
from replaylab.schemas.variant import TargetSpec
from replaylab.services.optim import Optimizer
from replaylab.services.replay import ReplayBuffer
from replaylab.services.sampler import SampleBatch
from replaylab.services.targets import assemble

HUBER_DELTA = 1.0


def huber(errors: np.ndarray, delta: float = HUBER_DELTA) -> np.ndarray:
    magnitude = np.abs(errors)
    return np.where(magnitude <= delta, 0.5 * errors**2, delta * (magnitude - 0.5 * delta))


def _ensure_finite(loss: float, grad: np.ndarray, what: str) -> None:
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise DivergenceError(f"non-finite {what} loss or gradient (loss={loss})")


def td_loss_and_grad(
    qf: QFunction,
    states: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    is_weights: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Importance-weighted mean Huber loss; returns (loss, flat gradient, TD errors)."""
    outputs, cache = qf.forward(states)
    rows = np.arange(outputs.shape[0])
    errors = outputs[rows, actions] - targets
    batch = max(outputs.shape[0], 1)
    loss = float(np.sum(is_weights * huber(errors)) / batch)
    grad_out = np.zeros_like(outputs)
    grad_out[rows, actions] = is_weights * np.clip(errors, -HUBER_DELTA, HUBER_DELTA) / batch
    grad = qf.backward(cache, grad_out)
    _ensure_finite(loss, grad, "TD")
    return loss, grad, errors


def c51_project(
    support: CategoricalSupport,
    probabilities: np.ndarray,
    rewards: np.ndarray | float,
    discounts: np.ndarray | float,
) -> np.ndarray:
    """Map atoms through r + d*z, clamp to the support and split mass between neighbours."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    single = probabilities.ndim == 1
    probs = np.atleast_2d(probabilities)
    batch, atoms_count = probs.shape
    rewards = np.broadcast_to(np.asarray(rewards, dtype=np.float64), (batch,))
    discounts = np.broadcast_to(np.asarray(discounts, dtype=np.float64), (batch,))
    shifted = np.clip(rewards[:, None] + discounts[:, None] * support.atoms[None, :], support.v_min, support.v_max)
    position = (shifted - support.v_min) / support.delta
    lower = np.clip(np.floor(position), 0, atoms_count - 1).astype(np.int64)
    upper = np.clip(np.ceil(position), 0, atoms_count - 1).astype(np.int64)
    same = lower == upper
    to_lower = np.where(same, probs, probs * (upper - position))
    to_upper = np.where(same, 0.0, probs * (position - lower))
    offsets = (np.arange(batch) * atoms_count)[:, None]
    projected = np.bincount(
        np.concatenate([(lower + offsets).ravel(), (upper + offsets).ravel()]),
        weights=np.concatenate([to_lower.ravel(), to_upper.ravel()]),
        minlength=batch * atoms_count,
    ).reshape(batch, atoms_count)
    return projected[0] if single else projected


def c51_loss_and_grad(
    qf: QFunction,
    states: np.ndarray,
    actions: np.ndarray,
    projected: np.ndarray,
    is_weights: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Importance-weighted cross-entropy at the taken action; returns (loss, flat gradient, per-sample CE)."""
    outputs, cache = qf.forward(states)
    batch = outputs.shape[0]
    logits = outputs.reshape(batch, qf.num_actions, qf.num_atoms)
    rows = np.arange(batch)
    taken = logits[rows, actions]
    cross_entropy = -np.sum(projected * log_softmax(taken), axis=1)
    scale = max(batch, 1)
    loss = float(np.sum(is_weights * cross_entropy) / scale)
    grad_logits = np.zeros_like(logits)
    grad_logits[rows, actions] = (
        softmax(taken) * projected.sum(axis=1, keepdims=True) - projected
    ) * (is_weights / scale)[:, None]
    grad = qf.backward(cache, grad_logits.reshape(batch, -1))
    _ensure_finite(loss, grad, "categorical")
    return loss, grad, cross_entropy


class TargetNetwork:
    def __init__(self, online: QFunction, sync_period: int) -> None:
        if sync_period <= 0:
            raise ValueError(f"sync_period must be positive, got {sync_period}")
        self.online = online
        self.sync_period = sync_period
        self.network = online.copy()
        self.next_sync = sync_period

    def sync(self, step: int = 0) -> None:
        self.network.set_params(self.online.params)
        self.next_sync = step + self.sync_period

    def maybe_sync(self, step: int) -> bool:
        if step >= self.next_sync:
            self.sync(step)
            return True
        return False


@dataclass(frozen=True, slots=True)
class LearnStep:
    loss: float
    priorities: np.ndarray


class Learner:
    """Online network, frozen target copy and optimizer for one run."""

    def __init__(self, qf: QFunction, optimizer: Optimizer, target_spec: TargetSpec, *, sync_period: int) -> None:
        self.qf = qf
        self.optimizer = optimizer
        self.target_spec = target_spec
        self.target = TargetNetwork(qf, sync_period)
        self.steps = 0

    def sync_target(self) -> None:
        """Copy the online parameters into the frozen network now and restart the sync period."""
        self.target.sync(self.steps)

    def learn(self, buffer: ReplayBuffer, batch: SampleBatch) -> LearnStep:
        assembled = assemble(buffer, batch.indices, self.target_spec)
        frozen = self.target.network
        if self.qf.head == "categorical":
            next_probs = frozen.predict(assembled.next_states)
            greedy = np.argmax(next_probs @ self.qf.support.atoms, axis=1)
            chosen = next_probs[np.arange(len(batch)), greedy]
            projected = c51_project(self.qf.support, chosen, assembled.returns, assembled.discounts)
            loss, grad, per_sample = c51_loss_and_grad(
                self.qf, assembled.states, assembled.actions, projected, batch.is_weights
            )
        else:
            bootstrap = frozen.action_values(assembled.next_states).max(axis=1)
            targets = assembled.returns + assembled.discounts * bootstrap
            loss, grad, per_sample = td_loss_and_grad(
                self.qf, assembled.states, assembled.actions, targets, batch.is_weights
            )
        self.qf.set_params(self.optimizer.step(self.qf.params, grad))
        self.steps += 1
        self.target.maybe_sync(self.steps)
        return LearnStep(loss=loss, priorities=np.abs(per_sample))
