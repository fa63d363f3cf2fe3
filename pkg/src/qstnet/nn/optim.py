from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import InvalidParameterError


@dataclass
class OptimConfig:
    """Optimiser and loop settings (defaults follow the reference training setup)."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    iterations: int = 100
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidParameterError("Adam betas must lie strictly between 0 and 1")
        if self.iterations < 0:
            raise InvalidParameterError("iteration budget must be >= 0")
        if self.learning_rate < 0:
            raise InvalidParameterError("learning rate must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update, in place on ``param.data``.

    ``params`` is a sequence of tensors, ``grads`` maps tensor -> gradient.
    Returns the (mutated) state.
    """
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    lr_t = config.learning_rate * np.sqrt(1 - b2**t) / (1 - b1**t)
    for i, p in enumerate(params):
        g = grads.get(p)
        if g is None:
            continue
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        # eps is scaled to match the textbook form m_hat / (sqrt(v_hat) + eps)
        p.data -= lr_t * m / (np.sqrt(v) + config.epsilon * np.sqrt(1 - b2**t))
    return state


class Adam:
    def __init__(self, params, config):
        self.params = list(params)
        self.config = config
        self.state = AdamState()

    def step(self, grads):
        adam_step(self.params, grads, self.state, self.config)


def cosine_lr(lr, step, total, floor=0.01):
    """Cosine decay from ``lr`` at ``step=0`` to ``floor * lr`` at ``step=total``."""
    frac = 0.5 * (1 + np.cos(np.pi * step / max(total, 1)))
    return lr * (floor + (1 - floor) * frac)


def tail_lr(lr, step, total, floor=0.01, hold=0.75):
    """Constant for the first ``hold`` fraction of the run, then cosine decay."""
    start = hold * total
    if step < start:
        return lr
    return cosine_lr(lr, step - start, total - start, floor)


SCHEDULES = {"none": None, "cosine": cosine_lr, "tail": tail_lr}
