"""Adam with inverse-time decay, and the reduce-on-plateau rule."""
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def current_rate(self):
        return self.learning_rate / (1.0 + self.decay * self.step_count)


def adam_step(params, grads, state):
    """One Adam update, in place on the parameter arrays.

    ``params`` are numpy arrays (or Tensors, whose ``data`` is used); ``grads``
    line up with them. The step size is ``lr / (1 + decay * step_count)``,
    with ``step_count`` counted before this update.
    """
    arrays = [p.data if isinstance(p, Tensor) else p for p in params]
    if len(arrays) != len(grads):
        raise ValueError(f"{len(arrays)} parameters but {len(grads)} gradients")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(a) for a in arrays]
        state.second_moment = [np.zeros_like(a) for a in arrays]
    if len(state.first_moment) != len(arrays):
        raise ValueError("optimizer state does not match the parameter list")
    for a, g, m in zip(arrays, grads, state.first_moment):
        if g is None:
            continue
        if g.shape != a.shape or m.shape != a.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {a.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to adam_step")

    lr = state.current_rate()
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for a, g, m, v in zip(arrays, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(a)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        a -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    state.step_count = t
    return params, state


class ReduceOnPlateau:
    """Divide the learning rate by ``factor`` after ``patience`` epochs without improvement.

    ``step`` is called once per epoch with the validation loss; it returns True
    on the epochs where the rate was reduced.
    """

    def __init__(self, patience=5, factor=10.0):
        self.patience = patience
        self.factor = factor
        self.best = np.inf
        self.wait = 0
        self.epoch = 0
        self.reductions = []

    def step(self, val_loss, state):
        self.epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.patience:
            state.learning_rate /= self.factor
            self.wait = 0
            self.reductions.append(self.epoch)
            return True
        return False
