from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

ApproximatorKind = Literal["tabular", "linear", "mlp"]
HeadKind = Literal["scalar", "categorical"]

CHECKPOINT_MAGIC = b"RLQFUNC1"
# magic, kind, head, obs_dim, num_actions, hidden, num_atoms, v_min, v_max
_HEADER = struct.Struct("<8sqqqqqqdd")
_KIND_CODES: dict[str, int] = {"tabular": 0, "linear": 1, "mlp": 2}
_HEAD_CODES: dict[str, int] = {"scalar": 0, "categorical": 1}


@dataclass(frozen=True, slots=True)
class CategoricalSupport:
    v_min: float
    v_max: float
    num_atoms: int = 51

    def __post_init__(self) -> None:
        if self.num_atoms < 2:
            raise ValueError(f"num_atoms must be >= 2, got {self.num_atoms}")
        if not self.v_max > self.v_min:
            raise ValueError(f"v_max ({self.v_max}) must exceed v_min ({self.v_min})")

    @property
    def delta(self) -> float:
        return (self.v_max - self.v_min) / (self.num_atoms - 1)

    @property
    def atoms(self) -> np.ndarray:
        return self.v_min + np.arange(self.num_atoms, dtype=np.float64) * self.delta


@dataclass(slots=True)
class ForwardCache:
    states: np.ndarray
    hidden_pre: np.ndarray | None = None
    hidden: np.ndarray | None = None


class QFunction:
    """Action-value approximator over a flat float64 parameter vector.

    Outputs are Q values for a scalar head, or per-action logits over the support
    atoms for a categorical head.
    """

    def __init__(
        self,
        kind: ApproximatorKind,
        obs_dim: int,
        num_actions: int,
        *,
        hidden: int = 64,
        support: CategoricalSupport | None = None,
        rng: np.random.Generator | None = None,
    ) -> None:
        if kind not in _KIND_CODES:
            raise ValueError(f"Unknown approximator kind: {kind}")
        if obs_dim <= 0 or num_actions <= 0:
            raise ValueError(f"obs_dim and num_actions must be positive, got {obs_dim}, {num_actions}")
        self.kind: ApproximatorKind = kind
        self.obs_dim = obs_dim
        self.num_actions = num_actions
        self.hidden = hidden if kind == "mlp" else 0
        self.support = support
        self.head: HeadKind = "categorical" if support is not None else "scalar"
        self.num_atoms = support.num_atoms if support is not None else 1
        self.out_dim = num_actions * self.num_atoms
        self._shapes = self._layout()
        self.params = np.zeros(sum(int(np.prod(shape)) for _, shape in self._shapes), dtype=np.float64)
        self._initialize(rng if rng is not None else np.random.default_rng(0))

    def _layout(self) -> list[tuple[str, tuple[int, ...]]]:
        match self.kind:
            case "tabular":
                return [("table", (self.obs_dim, self.out_dim))]
            case "linear":
                return [("W", (self.obs_dim, self.out_dim)), ("b", (self.out_dim,))]
            case _:
                return [
                    ("W1", (self.obs_dim, self.hidden)),
                    ("b1", (self.hidden,)),
                    ("W2", (self.hidden, self.out_dim)),
                    ("b2", (self.out_dim,)),
                ]

    def _views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in self._shapes:
            size = int(np.prod(shape))
            views[name] = flat[offset : offset + size].reshape(shape)
            offset += size
        return views

    def _initialize(self, rng: np.random.Generator) -> None:
        if self.kind == "tabular":
            return
        views = self._views(self.params)
        for name, shape in self._shapes:
            if name.startswith("W"):
                bound = 1.0 / np.sqrt(shape[0])
                views[name][...] = rng.uniform(-bound, bound, size=shape)

    @property
    def size(self) -> int:
        return int(self.params.size)

    def set_params(self, params: np.ndarray) -> None:
        if params.shape != self.params.shape:
            raise ValueError(f"expected {self.params.shape[0]} parameters, got {params.shape}")
        self.params = np.array(params, dtype=np.float64, copy=True)

    def copy(self) -> QFunction:
        clone = object.__new__(QFunction)
        for name in ("kind", "obs_dim", "num_actions", "hidden", "support", "head", "num_atoms", "out_dim", "_shapes"):
            setattr(clone, name, getattr(self, name))
        clone.params = self.params.copy()
        return clone

    def _check_states(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[None, :]
        if states.ndim != 2 or states.shape[1] != self.obs_dim:
            raise ValueError(f"state dimension {states.shape[-1]} does not match obs_dim {self.obs_dim}")
        return states

    def forward(self, states: np.ndarray, params: np.ndarray | None = None) -> tuple[np.ndarray, ForwardCache]:
        x = self._check_states(states)
        views = self._views(self.params if params is None else params)
        match self.kind:
            case "tabular":
                return x @ views["table"], ForwardCache(states=x)
            case "linear":
                return x @ views["W"] + views["b"], ForwardCache(states=x)
            case _:
                pre = x @ views["W1"] + views["b1"]
                h = np.maximum(pre, 0.0)
                return h @ views["W2"] + views["b2"], ForwardCache(states=x, hidden_pre=pre, hidden=h)

    def backward(self, cache: ForwardCache, grad_out: np.ndarray) -> np.ndarray:
        """Gradient of sum(grad_out * outputs) with respect to the flat parameters."""
        grad = np.zeros_like(self.params)
        views = self._views(grad)
        x = cache.states
        match self.kind:
            case "tabular":
                views["table"][...] = x.T @ grad_out
            case "linear":
                views["W"][...] = x.T @ grad_out
                views["b"][...] = grad_out.sum(axis=0)
            case _:
                params = self._views(self.params)
                views["W2"][...] = cache.hidden.T @ grad_out
                views["b2"][...] = grad_out.sum(axis=0)
                grad_hidden = (grad_out @ params["W2"].T) * (cache.hidden_pre > 0.0)
                views["W1"][...] = x.T @ grad_hidden
                views["b1"][...] = grad_hidden.sum(axis=0)
        return grad

    def predict(self, states: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        """(B, A) values, or (B, A, K) probabilities for a categorical head."""
        outputs, _ = self.forward(states, params)
        if self.head == "scalar":
            return outputs
        return softmax(outputs.reshape(-1, self.num_actions, self.num_atoms))

    def action_values(self, states: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        predicted = self.predict(states, params)
        if self.head == "scalar":
            return predicted
        return predicted @ self.support.atoms

    def q_values(self, state: np.ndarray) -> np.ndarray:
        state = np.asarray(state, dtype=np.float64)
        if state.ndim != 1:
            raise ValueError(f"expected a single state vector, got shape {state.shape}")
        return self.predict(state)[0]

    def save(self, path: Path) -> None:
        support = self.support
        header = _HEADER.pack(
            CHECKPOINT_MAGIC,
            _KIND_CODES[self.kind],
            _HEAD_CODES[self.head],
            self.obs_dim,
            self.num_actions,
            self.hidden,
            self.num_atoms,
            support.v_min if support else 0.0,
            support.v_max if support else 0.0,
        )
        Path(path).write_bytes(header + self.params.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: Path) -> QFunction:
        data = Path(path).read_bytes()
        if len(data) < _HEADER.size:
            raise ValueError(f"{path}: checkpoint header truncated")
        magic, kind_code, head_code, obs_dim, num_actions, hidden, num_atoms, v_min, v_max = _HEADER.unpack_from(data)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a Q-function checkpoint")
        kind = {code: name for name, code in _KIND_CODES.items()}[kind_code]
        support = CategoricalSupport(v_min, v_max, num_atoms) if head_code == _HEAD_CODES["categorical"] else None
        qf = cls(kind, obs_dim, num_actions, hidden=hidden or 64, support=support)
        params = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        qf.set_params(params.astype(np.float64))
        return qf


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
