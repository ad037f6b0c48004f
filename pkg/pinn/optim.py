from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from errors import ShapeError
from pinn.autograd import Node


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Node],
    state: AdamState,
    grads: Optional[Mapping[str, np.ndarray]] = None,
) -> Mapping[str, Node]:
    """
    One bias-corrected Adam update, in place.

    Args:
        params: Named trainable nodes
        state: Moments and step count, updated in place
        grads: Gradients by name; defaults to each node's `.grad`

    Returns:
        The same `params` mapping
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in sorted(params):
        node = params[name]
        g = node.grad if grads is None else grads[name]
        if g.shape != node.value.shape:
            raise ShapeError(f"adam_step[{name}]", node.value.shape, g.shape)
        m = state.m.setdefault(name, np.zeros_like(node.value))
        v = state.v.setdefault(name, np.zeros_like(node.value))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        node.value = node.value - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
