from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from replaylab.core.errors import DivergenceError
from replaylab.schemas.study import OptimSection

OptimizerKind = Literal["sgd", "rmsprop", "adam"]


@dataclass(slots=True)
class OptimizerState:
    kind: OptimizerKind
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None
    steps: int = 0


class Optimizer:
    kind: OptimizerKind

    def __init__(self, state: OptimizerState) -> None:
        self.state = state

    def _check(self, params: np.ndarray, grad: np.ndarray) -> None:
        if params.shape != grad.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match parameters {params.shape}")
        if not (np.all(np.isfinite(params)) and np.all(np.isfinite(grad))):
            raise DivergenceError(f"non-finite input to {self.state.kind} step {self.state.steps}")
        for moment in (self.state.first_moment, self.state.second_moment):
            if moment is not None and moment.shape != params.shape:
                raise ValueError(f"accumulator length {moment.shape} does not match parameters {params.shape}")

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self._check(params, grad)
        updated = self._update(params, grad)
        self.state.steps += 1
        return updated

    def _update(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, lr: float) -> None:
        super().__init__(OptimizerState(kind="sgd", lr=lr))

    def _update(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return params - self.state.lr * grad


class RMSProp(Optimizer):
    """Uncentered RMSProp: v <- rho*v + (1-rho)*g**2, theta <- theta - lr*g/sqrt(v+eps)."""

    def __init__(self, lr: float = 2.5e-3, *, decay: float = 0.95, eps: float = 1e-5) -> None:
        super().__init__(OptimizerState(kind="rmsprop", lr=lr, beta2=decay, eps=eps))

    def _update(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        state = self.state
        if state.second_moment is None:
            state.second_moment = np.zeros_like(params)
        state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad**2
        return params - state.lr * grad / np.sqrt(state.second_moment + state.eps)


class Adam(Optimizer):
    def __init__(self, lr: float = 1e-3, *, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        super().__init__(OptimizerState(kind="adam", lr=lr, beta1=beta1, beta2=beta2, eps=eps))

    def _update(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        state = self.state
        if state.first_moment is None or state.second_moment is None:
            state.first_moment = np.zeros_like(params)
            state.second_moment = np.zeros_like(params)
        state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
        state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad**2
        t = state.steps + 1
        m_hat = state.first_moment / (1.0 - state.beta1**t)
        v_hat = state.second_moment / (1.0 - state.beta2**t)
        return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def make_optimizer(section: OptimSection, *, use_adam: bool) -> Optimizer:
    kind = section.kind if section.kind != "auto" else ("adam" if use_adam else "rmsprop")
    match kind:
        case "sgd":
            return SGD(section.sgd_lr)
        case "rmsprop":
            return RMSProp(section.rmsprop_lr, decay=section.rmsprop_decay, eps=section.rmsprop_eps)
        case "adam":
            return Adam(section.adam_lr, beta1=section.adam_beta1, beta2=section.adam_beta2, eps=section.adam_eps)
        case _:
            raise ValueError(f"Unknown optimizer kind: {kind}")
