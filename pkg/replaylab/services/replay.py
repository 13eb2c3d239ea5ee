from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from replaylab.core.errors import BufferIndexError, EmptyBufferError
from replaylab.schemas.results import BufferStats

# distinct state-action counting is skipped for observations wider than this
COVERAGE_MAX_OBS_DIM = 512


@dataclass(frozen=True, slots=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    policy_stamp: int
    env_step: int
    episode_id: int
    truncated: bool = False


class InsertListener(Protocol):
    def on_insert(self, slot: int, position: int) -> None: ...


def expected_updates_per_transition(replay_ratio: float, batch_size: int) -> float:
    """Expected number of times a transition is sampled over its lifetime; independent of capacity."""
    if replay_ratio <= 0 or batch_size <= 0:
        raise ValueError(f"replay_ratio and batch_size must be positive, got {replay_ratio}, {batch_size}")
    return replay_ratio * batch_size


class ReplayBuffer:
    """Circular transition store addressed by slot or by global insertion position."""

    def __init__(self, capacity: int, obs_dim: int, num_actions: int) -> None:
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.num_actions = num_actions
        self.states = np.zeros((capacity, obs_dim), dtype=np.float64)
        self.next_states = np.zeros((capacity, obs_dim), dtype=np.float64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.truncated = np.zeros(capacity, dtype=bool)
        self.policy_stamps = np.zeros(capacity, dtype=np.int64)
        self.env_steps = np.zeros(capacity, dtype=np.int64)
        self.episode_ids = np.zeros(capacity, dtype=np.int64)
        self.write_cursor = 0
        self.inserted_total = 0
        self.frozen = False
        self._listeners: list[InsertListener] = []

    @property
    def size(self) -> int:
        return min(self.inserted_total, self.capacity)

    @property
    def oldest_position(self) -> int:
        return self.inserted_total - self.size

    def __len__(self) -> int:
        return self.size

    def attach(self, listener: InsertListener) -> None:
        self._listeners.append(listener)

    def freeze(self) -> None:
        self.frozen = True

    def _validate(self, transition: Transition) -> None:
        if self.frozen:
            raise ValueError("buffer is frozen; offline buffers are read-only")
        if np.shape(transition.state) != (self.obs_dim,) or np.shape(transition.next_state) != (self.obs_dim,):
            raise ValueError(f"observation shape must be ({self.obs_dim},)")
        if not 0 <= transition.action < self.num_actions:
            raise ValueError(f"action {transition.action} outside [0, {self.num_actions})")
        if not math.isfinite(transition.reward):
            raise ValueError(f"reward must be finite, got {transition.reward}")
        if transition.policy_stamp < 0:
            raise ValueError(f"policy_stamp must be >= 0, got {transition.policy_stamp}")
        if self.inserted_total and transition.policy_stamp < self.policy_stamps[self._slot_before_cursor()]:
            raise ValueError("policy_stamp must be non-decreasing in insertion order")

    def _slot_before_cursor(self) -> int:
        return (self.write_cursor - 1) % self.capacity

    def insert(self, transition: Transition) -> int:
        self._validate(transition)
        slot = self.write_cursor
        self.states[slot] = transition.state
        self.next_states[slot] = transition.next_state
        self.actions[slot] = transition.action
        self.rewards[slot] = transition.reward
        self.terminals[slot] = transition.terminal
        self.truncated[slot] = transition.truncated
        self.policy_stamps[slot] = transition.policy_stamp
        self.env_steps[slot] = transition.env_step
        self.episode_ids[slot] = transition.episode_id
        position = self.inserted_total
        self.inserted_total += 1
        self.write_cursor = (slot + 1) % self.capacity
        for listener in self._listeners:
            listener.on_insert(slot, position)
        return slot

    def extend(self, transitions: list[Transition]) -> None:
        for transition in transitions:
            self.insert(transition)

    def is_stored(self, position: int) -> bool:
        return self.oldest_position <= position < self.inserted_total

    def position_of(self, slot: int) -> int:
        if not 0 <= slot < self.size:
            raise BufferIndexError(f"slot {slot} holds no transition (size {self.size})")
        newest = self.inserted_total - 1
        return newest - (newest - slot) % self.capacity

    def at_slot(self, slot: int) -> Transition:
        if not 0 <= slot < self.size:
            raise BufferIndexError(f"slot {slot} holds no transition (size {self.size})")
        return Transition(
            state=self.states[slot].copy(),
            action=int(self.actions[slot]),
            reward=float(self.rewards[slot]),
            next_state=self.next_states[slot].copy(),
            terminal=bool(self.terminals[slot]),
            policy_stamp=int(self.policy_stamps[slot]),
            env_step=int(self.env_steps[slot]),
            episode_id=int(self.episode_ids[slot]),
            truncated=bool(self.truncated[slot]),
        )

    def get(self, position: int) -> Transition:
        if self.size == 0:
            raise BufferIndexError("buffer is empty")
        if not self.is_stored(position):
            raise BufferIndexError(
                f"position {position} is not stored (held: {self.oldest_position}..{self.inserted_total - 1})"
            )
        return self.at_slot(position % self.capacity)

    def oldest_policy_age(self, current_gradient_step: int) -> int:
        if self.size == 0:
            raise EmptyBufferError("oldest_policy_age of an empty buffer")
        # stamps are non-decreasing, so the oldest slot carries the minimum
        return current_gradient_step - int(self.policy_stamps[self.oldest_position % self.capacity])

    def chain(self, position: int, horizon: int | None) -> int | None:
        """Transitions a target starting at `position` spans, or None when it cannot be assembled.

        A terminal inside the horizon shortens the span. A time-limit truncation may only
        close the span, never sit inside it. horizon None reads to the episode end.
        """
        if not self.is_stored(position):
            return None
        episode = self.episode_ids[position % self.capacity]
        limit = horizon if horizon is not None else self.size
        for k in range(limit):
            current = position + k
            if current >= self.inserted_total:
                return None
            slot = current % self.capacity
            if self.episode_ids[slot] != episode:
                return None
            if self.terminals[slot]:
                return k + 1
            if self.truncated[slot]:
                return k + 1 if horizon is not None and k == horizon - 1 else None
        return limit if horizon is not None else None

    def episode_tail(self, position: int) -> list[float]:
        span = self.chain(position, None)
        if span is None:
            raise BufferIndexError(f"position {position} does not reach a stored episode end")
        return [float(self.rewards[(position + k) % self.capacity]) for k in range(span)]

    def valid_indices(self, horizon: int | None) -> np.ndarray:
        """Sorted slots whose targets can be assembled for the given horizon."""
        positions = np.arange(self.oldest_position, self.inserted_total, dtype=np.int64)
        if positions.size == 0:
            return positions
        episodes = self.episode_ids[positions % self.capacity]
        valid = np.ones(positions.size, dtype=bool)
        done = np.zeros(positions.size, dtype=bool)
        limit = horizon if horizon is not None else self.size
        for k in range(limit):
            active = valid & ~done
            if not active.any():
                break
            current = positions + k
            in_range = current < self.inserted_total
            valid &= ~(active & ~in_range)
            active &= in_range
            slots = np.where(active, current % self.capacity, 0)
            same = self.episode_ids[slots] == episodes
            valid &= ~(active & ~same)
            active &= same
            ended = active & self.terminals[slots]
            done |= ended
            cut = active & ~ended & self.truncated[slots]
            if horizon is not None and k == horizon - 1:
                done |= cut
            else:
                valid &= ~cut
        if horizon is None:
            valid &= done
        return np.sort(positions[valid] % self.capacity)

    def valid_nstep_indices(self, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        return self.valid_indices(n)

    def stats(self, current_gradient_step: int, *, buckets: int = 10) -> BufferStats:
        if self.size == 0:
            raise EmptyBufferError("stats of an empty buffer")
        ages = current_gradient_step - self.policy_stamps[: self.size]
        if ages.min() < 0:
            raise ValueError(
                f"gradient step {current_gradient_step} precedes stored policy stamp {int(self.policy_stamps[: self.size].max())}"
            )
        edges = np.unique(np.linspace(0, int(ages.max()) + 1, buckets + 1).round().astype(np.int64))
        histogram, _ = np.histogram(ages, bins=edges)
        coverage = None
        if self.obs_dim <= COVERAGE_MAX_OBS_DIM:
            pairs = np.column_stack([self.states[: self.size], self.actions[: self.size]])
            coverage = int(np.unique(pairs, axis=0).shape[0])
        return BufferStats(
            oldest_policy_age=self.oldest_policy_age(current_gradient_step),
            age_bucket_edges=edges.tolist(),
            age_histogram=histogram.tolist(),
            distinct_state_action_count=coverage,
            size=self.size,
        )
