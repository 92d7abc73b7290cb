"""Parameter update rules.

Both optimizers mutate the parameter buffers in place (the graph owns them)
and are driven by plain name-keyed gradient dicts as produced by
NetworkGraph.backward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

__all__ = ["SgdState", "AdamState", "sgd_step", "adam_step", "apply_step"]


@dataclass
class SgdState:
    """Plain gradient descent, no momentum: p <- p - lr * g."""

    lr: float

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")


@dataclass
class AdamState:
    """Adam with bias correction; epsilon is added outside the square root.

        t <- t + 1
        m <- beta1 * m + (1 - beta1) * g
        v <- beta2 * v + (1 - beta2) * g^2
        p <- p - lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + eps)
    """

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not (0.0 <= b < 1.0):
                raise ParameterError(f"{name} must be in [0, 1), got {b}")
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")


def sgd_step(state: SgdState, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is not None:
            p -= state.lr * g


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> None:
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def apply_step(state, params, grads) -> None:
    if isinstance(state, SgdState):
        sgd_step(state, params, grads)
    elif isinstance(state, AdamState):
        adam_step(state, params, grads)
    else:
        raise ParameterError(f"unknown optimizer state {type(state).__name__}")
