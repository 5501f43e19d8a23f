"""First-order optimizers over named parameter arrays.

Every optimizer exposes ``step(params, grads)`` where both arguments map a
parameter name to an array; parameters are updated in place.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from ...core.errors import DimensionError, ParameterError

Arrays = Mapping[str, np.ndarray]


class Optimizer(Protocol):
    lr: float

    def step(self, params: Arrays, grads: Arrays) -> None: ...


def _check(params: Arrays, grads: Arrays) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None or np.shape(g) != p.shape:
            raise DimensionError(f"gradient for {name} has shape {np.shape(g)}, expected {p.shape}")


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Arrays, grads: Arrays) -> tuple[Arrays, AdamState]:
    """One bias-corrected Adam update applied in place.

    m_hat = m / (1 - beta1^t), v_hat = v / (1 - beta2^t),
    theta -= lr * m_hat / (sqrt(v_hat) + epsilon)
    """
    _check(params, grads)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


class Adam:
    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    @property
    def lr(self) -> float:
        return self.state.lr

    def step(self, params: Arrays, grads: Arrays) -> None:
        adam_step(self.state, params, grads)


class SGDMomentum:
    def __init__(self, lr: float = 1e-4, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: Arrays, grads: Arrays) -> None:
        _check(params, grads)
        for name, p in params.items():
            vel = self.velocity.setdefault(name, np.zeros_like(p))
            vel *= self.momentum
            vel -= self.lr * grads[name]
            p += vel


class RMSProp:
    def __init__(self, lr: float = 1e-4, rho: float = 0.9, epsilon: float = 1e-8):
        self.lr = lr
        self.rho = rho
        self.epsilon = epsilon
        self.sq: dict[str, np.ndarray] = {}

    def step(self, params: Arrays, grads: Arrays) -> None:
        _check(params, grads)
        for name, p in params.items():
            g = grads[name]
            s = self.sq.setdefault(name, np.zeros_like(p))
            s *= self.rho
            s += (1.0 - self.rho) * (g * g)
            p -= self.lr * g / (np.sqrt(s) + self.epsilon)


class AdaGrad:
    def __init__(self, lr: float = 1e-4, epsilon: float = 1e-8):
        self.lr = lr
        self.epsilon = epsilon
        self.sq: dict[str, np.ndarray] = {}

    def step(self, params: Arrays, grads: Arrays) -> None:
        _check(params, grads)
        for name, p in params.items():
            g = grads[name]
            s = self.sq.setdefault(name, np.zeros_like(p))
            s += g * g
            p -= self.lr * g / (np.sqrt(s) + self.epsilon)


OPTIMIZERS = {
    "adam": Adam,
    "sgd_momentum": SGDMomentum,
    "rmsprop": RMSProp,
    "adagrad": AdaGrad,
}


def make_optimizer(name: str, lr: float) -> Optimizer:
    try:
        return OPTIMIZERS[name](lr=lr)
    except KeyError:
        raise ParameterError(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}") from None
