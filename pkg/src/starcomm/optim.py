"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import Parameter


class FrozenParameterError(RuntimeError):
    pass


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def like(cls, p: Parameter, **kw) -> AdamState:
        return cls(np.zeros_like(p.data), np.zeros_like(p.data), **kw)


def adam_step(p: Parameter, s: AdamState, lr: float = 1e-4) -> None:
    if not p.trainable:
        raise FrozenParameterError(f"refusing to update frozen parameter {p.name!r}")
    g = p.grad
    s.step_count += 1
    s.first_moment = s.beta1 * s.first_moment + (1.0 - s.beta1) * g
    s.second_moment = s.beta2 * s.second_moment + (1.0 - s.beta2) * g * g
    m_hat = s.first_moment / (1.0 - s.beta1 ** s.step_count)
    v_hat = s.second_moment / (1.0 - s.beta2 ** s.step_count)
    p.data -= lr * m_hat / (np.sqrt(v_hat) + s.epsilon)


@dataclass
class Adam:
    """Keeps one AdamState per parameter name; steps only trainable ones."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def state_for(self, p: Parameter) -> AdamState:
        if p.name not in self.states:
            self.states[p.name] = AdamState.like(p, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)
        return self.states[p.name]

    def step(self, params: Iterable[Parameter]) -> None:
        for p in params:
            if p.trainable:
                adam_step(p, self.state_for(p), self.lr)
