"""Adam with bias correction."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, state):
    """Apply one Adam update in place. Gradients are left for the caller to clear."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} (shape {p.shape}) has no gradient")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ValueError(f"optimizer state tracks {len(state.m)} parameters, got {len(params)}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.data.shape:
            raise ValueError(f"moment shape {m.shape} does not match parameter {p.data.shape}")
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


def zero_grad(params):
    for p in params:
        p.grad = None
