from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from replaylab.core.errors import DivergenceError, EmptyBufferError, EmptyMeasureError
from replaylab.schemas.study import SamplerSection
from replaylab.services.replay import ReplayBuffer


class SumTree:
    """Binary sum tree over a power-of-two number of leaves; node 1 is the root."""

    def __init__(self, capacity: int) -> None:
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.leaf_count = 1 << (capacity - 1).bit_length()
        self.depth = self.leaf_count.bit_length() - 1
        self.nodes = np.zeros(2 * self.leaf_count, dtype=np.float64)

    def total(self) -> float:
        return float(self.nodes[1])

    def get(self, leaf: int) -> float:
        return float(self.nodes[self.leaf_count + leaf])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.leaf_count : self.leaf_count + self.capacity]

    def set(self, leaf: int, priority: float) -> None:
        if not 0 <= leaf < self.capacity:
            raise IndexError(f"leaf {leaf} outside [0, {self.capacity})")
        if not np.isfinite(priority) or priority < 0:
            raise ValueError(f"priority must be finite and >= 0, got {priority}")
        node = self.leaf_count + leaf
        self.nodes[node] = priority
        node //= 2
        while node >= 1:
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1]
            node //= 2

    def set_batch(self, leaves: np.ndarray, priorities: np.ndarray) -> None:
        leaves = np.asarray(leaves, dtype=np.int64)
        priorities = np.asarray(priorities, dtype=np.float64)
        if leaves.size == 0:
            return
        if leaves.min() < 0 or leaves.max() >= self.capacity:
            raise IndexError(f"leaves outside [0, {self.capacity})")
        if not np.all(np.isfinite(priorities)) or priorities.min() < 0:
            raise ValueError("priorities must be finite and >= 0")
        nodes = self.leaf_count + leaves
        self.nodes[nodes] = priorities
        for _ in range(self.depth):
            nodes = np.unique(nodes // 2)
            self.nodes[nodes] = self.nodes[2 * nodes] + self.nodes[2 * nodes + 1]

    def find(self, u: float) -> int:
        total = self.total()
        if total <= 0.0:
            raise EmptyMeasureError("sum tree holds no mass")
        if not 0.0 <= u < total:
            raise ValueError(f"u={u} outside [0, {total})")
        node = 1
        while node < self.leaf_count:
            left = 2 * node
            if u < self.nodes[left]:
                node = left
            else:
                u -= self.nodes[left]
                node = left + 1
        return self._nonzero_leaf(node - self.leaf_count)

    def find_batch(self, us: np.ndarray) -> np.ndarray:
        total = self.total()
        if total <= 0.0:
            raise EmptyMeasureError("sum tree holds no mass")
        us = np.asarray(us, dtype=np.float64).copy()
        if us.size and (us.min() < 0.0 or us.max() >= total):
            raise ValueError(f"draws outside [0, {total})")
        nodes = np.ones(us.size, dtype=np.int64)
        for _ in range(self.depth):
            left = 2 * nodes
            left_mass = self.nodes[left]
            go_right = us >= left_mass
            us = np.where(go_right, us - left_mass, us)
            nodes = np.where(go_right, left + 1, left)
        leaves = nodes - self.leaf_count
        for i in np.flatnonzero(self.nodes[nodes] <= 0.0):
            leaves[i] = self._nonzero_leaf(int(leaves[i]))
        return leaves

    def _nonzero_leaf(self, leaf: int) -> int:
        # float residue from the descent can land on an empty leaf at a boundary
        if self.get(leaf) > 0.0:
            return leaf
        masses = self.leaves()
        candidates = np.flatnonzero(masses > 0.0)
        return int(candidates[np.argmin(np.abs(candidates - leaf))])


@dataclass(frozen=True, slots=True)
class SampleBatch:
    indices: np.ndarray
    is_weights: np.ndarray
    probabilities: np.ndarray

    def __len__(self) -> int:
        return int(self.indices.size)

    @classmethod
    def empty(cls) -> SampleBatch:
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0))


def importance_weights(probabilities: np.ndarray, size: int, beta: float) -> np.ndarray:
    raw = (size * np.asarray(probabilities, dtype=np.float64)) ** (-beta)
    return raw / raw.max()


class _ValidSlots:
    """Slots whose targets are assemblable for a horizon, kept current on every insert."""

    def __init__(self, buffer: ReplayBuffer, horizon: int | None) -> None:
        if horizon is not None and horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        self.buffer = buffer
        self.horizon = horizon
        self.valid = np.zeros(buffer.capacity, dtype=bool)
        for slot in buffer.valid_indices(horizon):
            self._mark(int(slot), True)
        buffer.attach(self)

    @property
    def valid_count(self) -> int:
        return int(self.valid.sum())

    def _mark(self, slot: int, valid: bool) -> None:
        self.valid[slot] = valid

    def on_insert(self, slot: int, position: int) -> None:
        buffer = self.buffer
        if self.horizon is None:
            self._mark(slot, buffer.chain(position, None) is not None)
            if buffer.terminals[slot]:
                episode = buffer.episode_ids[slot]
                back = position - 1
                while buffer.is_stored(back) and buffer.episode_ids[back % buffer.capacity] == episode:
                    self._mark(back % buffer.capacity, True)
                    back -= 1
            return
        start = max(buffer.oldest_position, position - self.horizon + 1)
        for current in range(start, position + 1):
            self._mark(current % buffer.capacity, buffer.chain(current, self.horizon) is not None)


class UniformSampler(_ValidSlots):
    def sample(self, batch_size: int, rng: np.random.Generator) -> SampleBatch:
        if batch_size == 0:
            return SampleBatch.empty()
        candidates = np.flatnonzero(self.valid)
        if candidates.size == 0:
            raise EmptyBufferError(f"no sampleable transitions for horizon {self.horizon}")
        indices = candidates[rng.integers(0, candidates.size, size=batch_size)]
        return SampleBatch(
            indices=indices,
            is_weights=np.ones(batch_size),
            probabilities=np.full(batch_size, 1.0 / candidates.size),
        )

    def probabilities(self) -> np.ndarray:
        count = self.valid_count
        return self.valid / count if count else np.zeros(self.buffer.capacity)

    def update_priorities(self, indices: np.ndarray, td_errors: np.ndarray) -> None:
        return None


class PrioritizedSampler(_ValidSlots):
    """Proportional prioritized sampling; the tree holds p**alpha on valid slots and 0 elsewhere."""

    def __init__(
        self,
        buffer: ReplayBuffer,
        horizon: int | None,
        *,
        alpha: float = 0.5,
        beta: float = 0.5,
        priority_floor: float = 1e-3,
    ) -> None:
        if alpha < 0 or not 0 <= beta <= 1:
            raise ValueError(f"need alpha >= 0 and beta in [0, 1], got {alpha}, {beta}")
        self.alpha = alpha
        self.beta = beta
        self.priority_floor = priority_floor
        self.max_priority = 1.0
        self.priorities = np.zeros(buffer.capacity, dtype=np.float64)
        self.tree = SumTree(buffer.capacity)
        self.priorities[: buffer.size] = self.max_priority
        super().__init__(buffer, horizon)

    def _mark(self, slot: int, valid: bool) -> None:
        self.valid[slot] = valid
        self.tree.set(slot, self.priorities[slot] ** self.alpha if valid else 0.0)

    def on_insert(self, slot: int, position: int) -> None:
        self.priorities[slot] = self.max_priority
        super().on_insert(slot, position)

    def sample(self, batch_size: int, rng: np.random.Generator) -> SampleBatch:
        if batch_size == 0:
            return SampleBatch.empty()
        total = self.tree.total()
        if total <= 0.0:
            raise EmptyMeasureError(f"no sampleable transitions for horizon {self.horizon}")
        # one uniform draw per stratum of the total mass
        draws = (np.arange(batch_size) + rng.random(batch_size)) * (total / batch_size)
        draws = np.minimum(draws, np.nextafter(total, 0.0))
        indices = self.tree.find_batch(draws)
        probabilities = self.tree.nodes[self.tree.leaf_count + indices] / total
        return SampleBatch(
            indices=indices,
            is_weights=importance_weights(probabilities, self.buffer.size, self.beta),
            probabilities=probabilities,
        )

    def probabilities(self) -> np.ndarray:
        total = self.tree.total()
        return self.tree.leaves() / total if total > 0 else np.zeros(self.buffer.capacity)

    def update_priorities(self, indices: np.ndarray, td_errors: np.ndarray) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        td_errors = np.asarray(td_errors, dtype=np.float64)
        if not np.all(np.isfinite(td_errors)):
            raise DivergenceError("non-finite TD error in priority update")
        if indices.size == 0:
            return
        priorities = np.abs(td_errors) + self.priority_floor
        self.priorities[indices] = priorities
        self.max_priority = max(self.max_priority, float(priorities.max()))
        leaves = self.priorities[indices] ** self.alpha
        self.tree.set_batch(indices, np.where(self.valid[indices], leaves, 0.0))


Sampler = UniformSampler | PrioritizedSampler


def make_sampler(buffer: ReplayBuffer, horizon: int | None, *, prioritized: bool, section: SamplerSection) -> Sampler:
    if prioritized:
        return PrioritizedSampler(
            buffer,
            horizon,
            alpha=section.alpha,
            beta=section.beta,
            priority_floor=section.priority_floor,
        )
    return UniformSampler(buffer, horizon)
