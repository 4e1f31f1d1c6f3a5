"""Adam with linear warmup and per-step exponential learning-rate decay.

Parameters are updated in place; moment tensors live in the parameter dtype.
The update order follows the parameter dict's insertion order, so updates are
bitwise deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def scheduled_lr(step: int, base_lr: float, warmup_steps: int, decay_rate: float) -> float:
    """Linear ramp to base_lr at step == warmup_steps, then base_lr * decay^(step - warmup).

    Continuous at the boundary and non-increasing afterwards.
    """
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if warmup_steps > 0 and step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * decay_rate ** (step - warmup_steps)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def init_adam(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> None:
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
