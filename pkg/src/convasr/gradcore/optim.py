"""Plain SGD, Nesterov momentum and Adam over named parameter dicts."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import ConfigError, ConsistencyError
from .tensor import Tensor

KINDS = ("sgd", "nesterov", "adam")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"optimizer kind must be one of {KINDS}, got {self.kind!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass
class OptimizerState:
    config: OptimizerConfig
    step_count: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
         state: OptimizerState) -> Mapping[str, Tensor]:
    """Apply one update in place (parameters visited in sorted-name order).

    sgd:      p <- p - lr * g
    nesterov: v <- mu * v + g;  p <- p - lr * (g + mu * v)
    adam:     bias-corrected first/second moments, p <- p - lr * m_hat / (sqrt(v_hat) + eps)
    """
    missing = sorted(set(params) - set(grads))
    if missing:
        raise ConsistencyError(f"no gradient for parameter(s): {', '.join(missing)}")
    cfg = state.config
    state.step_count += 1
    t = state.step_count
    for name in sorted(params):
        p = params[name]
        g = np.asarray(grads[name], dtype=p.data.dtype)
        if g.shape != p.shape:
            raise ConsistencyError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if cfg.kind == "sgd":
            p.data = p.data - cfg.learning_rate * g
        elif cfg.kind == "nesterov":
            v = cfg.momentum * state.velocity.get(name, np.zeros_like(g)) + g
            state.velocity[name] = v
            p.data = p.data - cfg.learning_rate * (g + cfg.momentum * v)
        else:
            m = cfg.beta1 * state.first_moment.get(name, np.zeros_like(g)) + (1 - cfg.beta1) * g
            s = cfg.beta2 * state.second_moment.get(name, np.zeros_like(g)) + (1 - cfg.beta2) * g * g
            state.first_moment[name] = m
            state.second_moment[name] = s
            m_hat = m / (1 - cfg.beta1 ** t)
            s_hat = s / (1 - cfg.beta2 ** t)
            p.data = p.data - cfg.learning_rate * m_hat / (np.sqrt(s_hat) + cfg.eps)
    return params


class Optimizer:
    """Convenience wrapper holding the state for one parameter dict."""

    def __init__(self, params: Mapping[str, Tensor], config: OptimizerConfig):
        self.params = params
        self.state = OptimizerState(config)

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        step(self.params, grads, self.state)
