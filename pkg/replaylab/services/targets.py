from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from replaylab.core.errors import BufferIndexError
from replaylab.models.qfunction import QFunction
from replaylab.schemas.variant import TargetSpec
from replaylab.services.replay import ReplayBuffer, Transition

ValueSource = QFunction | Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, slots=True)
class AssembledBatch:
    """Discounted reward sums and bootstrap weights; target = returns + discounts * V(next_states)."""

    slots: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    returns: np.ndarray
    discounts: np.ndarray
    next_states: np.ndarray
    spans: np.ndarray


def max_action_value(q_target: ValueSource, state: np.ndarray) -> float:
    if isinstance(q_target, QFunction):
        return float(q_target.action_values(state)[0].max())
    return float(np.max(q_target(state)))


def mc_return(rewards: Sequence[float], gamma: float) -> float:
    total = 0.0
    for k, reward in enumerate(rewards):
        total += gamma**k * reward
    return total


def _span(buffer: ReplayBuffer, slot: int, spec: TargetSpec) -> tuple[int, int]:
    position = buffer.position_of(slot)
    span = buffer.chain(position, spec.horizon)
    if span is None:
        raise BufferIndexError(f"slot {slot} cannot assemble a {spec.kind} target (horizon {spec.horizon})")
    return position, span


def assemble(buffer: ReplayBuffer, slots: np.ndarray, spec: TargetSpec) -> AssembledBatch:
    slots = np.asarray(slots, dtype=np.int64)
    returns = np.zeros(slots.size)
    discounts = np.zeros(slots.size)
    spans = np.zeros(slots.size, dtype=np.int64)
    last_slots = np.zeros(slots.size, dtype=np.int64)
    for i, slot in enumerate(slots):
        position, span = _span(buffer, int(slot), spec)
        rewards = [buffer.rewards[(position + k) % buffer.capacity] for k in range(span)]
        last = (position + span - 1) % buffer.capacity
        returns[i] = mc_return(rewards, spec.gamma)
        spans[i] = span
        last_slots[i] = last
        if buffer.terminals[last] or spec.kind == "monte_carlo":
            discounts[i] = 0.0
        elif spec.kind == "contraction_matched":
            discounts[i] = spec.gamma**spec.n
        else:
            discounts[i] = spec.gamma**span
    return AssembledBatch(
        slots=slots,
        states=buffer.states[slots],
        actions=buffer.actions[slots],
        returns=returns,
        discounts=discounts,
        next_states=buffer.next_states[last_slots],
        spans=spans,
    )


def nstep_target(buffer: ReplayBuffer, slot: int, spec: TargetSpec, q_target: ValueSource) -> float:
    """Discounted rewards over the span plus the discounted greedy bootstrap, omitted at a terminal."""
    batch = assemble(buffer, np.array([slot]), spec)
    if batch.discounts[0] == 0.0:
        return float(batch.returns[0])
    return float(batch.returns[0] + batch.discounts[0] * max_action_value(q_target, batch.next_states[0]))


def contraction_matched_target(transition: Transition, n: int, gamma: float, q_target: ValueSource) -> float:
    """One-step target whose bootstrap carries the n-step contraction factor gamma**n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if transition.terminal:
        return float(transition.reward)
    return float(transition.reward + gamma**n * max_action_value(q_target, transition.next_state))
