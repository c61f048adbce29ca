from dataclasses import dataclass
from typing import Sequence

import numpy as np

from diffcore.dc_tensor import Parameter
from utils.constant import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, LEARNING_RATE


def _real_view(a: np.ndarray) -> np.ndarray:
    # complex arrays are updated as interleaved (re, im) pairs
    return a.view(a.real.dtype) if np.iscomplexobj(a) else a


def adam_step(
    params: Sequence[Parameter],
    lr: float = LEARNING_RATE,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPSILON,
):
    """
    One bias-corrected Adam update of every parameter, then zeroes the gradients.

    Real and imaginary parts of complex parameters are treated as independent
    real coordinates. Parameters are visited in the given order.
    """
    for p in params:
        p.step += 1
        g = _real_view(p.grad)
        m = _real_view(p.m)
        v = _real_view(p.v)
        x = _real_view(p.data)

        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g

        m_hat = m / (1.0 - beta1 ** p.step)
        v_hat = v / (1.0 - beta2 ** p.step)
        x -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(x.dtype)
        p.zero_grad()


@dataclass
class Adam:
    params: Sequence[Parameter]
    lr: float = LEARNING_RATE
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPSILON

    def step(self):
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
