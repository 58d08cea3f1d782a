"""AdamW with decoupled weight decay, and the polynomial LR schedule."""

import numpy as np

from .errors import ScheduleError
from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def poly_lr(k: int, max_k: int, lr_init: float, power: float = 0.9) -> float:
    """lr_init * (1 - k/K)^power for 0 <= k <= K."""
    if k < 0 or k > max_k:
        raise ScheduleError(f"schedule step {k} outside [0, {max_k}]")
    return lr_init * (1.0 - k / max_k) ** power


def adamw_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
               t: int, lr: float, weight_decay: float,
               beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS) -> None:
    """One in-place update. Decay is decoupled: applied to the parameter
    directly, before the bias-corrected moment step."""
    if weight_decay:
        param -= lr * weight_decay * param
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class AdamW:
    """Holds per-parameter moment buffers keyed by registry name."""

    def __init__(self, named_params: list, weight_decay: float = 1e-2):
        self.params = list(named_params)
        self.weight_decay = weight_decay
        self.t = 0
        self.moments = {name: (np.zeros_like(p.data), np.zeros_like(p.data))
                        for name, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        for name, p in self.params:
            if p.grad is None:
                continue
            m, v = self.moments[name]
            adamw_step(p.data, p.grad, m, v, self.t, lr, self.weight_decay)

    def state_arrays(self) -> dict:
        """Moment buffers in registry order plus the step counter."""
        return {"t": self.t, "moments": self.moments}

    def load_state(self, t: int, moments: dict) -> None:
        self.t = t
        for name, (m, v) in moments.items():
            sm, sv = self.moments[name]
            sm[...] = m
            sv[...] = v
