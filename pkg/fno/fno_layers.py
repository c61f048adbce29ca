import math
from typing import List

import numpy as np

from diffcore import dc_ops
from diffcore.dc_tensor import Parameter, Tensor, complex_dtype


class Pointwise:
    """1x1 convolution: Kaiming-uniform weights, zero bias."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, dtype, name: str):
        bound = math.sqrt(6.0 / in_channels)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight = Parameter(rng.uniform(-bound, bound, size=(out_channels, in_channels)).astype(dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return dc_ops.pointwise(x, self.weight, self.bias)

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]


class SpectralLayer:
    """
    Fourier layer: spectral convolution on the retained modes plus a pointwise bypass.

    The complex weight has shape (width, width, 2*modes1, modes2): the first
    modes1 rows act on the positive first-axis frequencies, the last modes1 rows
    on the negative ones. The real inverse transform supplies the Hermitian
    partners, so the output is real.
    """

    def __init__(self, width: int, modes1: int, modes2: int, rng: np.random.Generator, dtype, name: str):
        self.width = width
        self.modes1 = modes1
        self.modes2 = modes2
        shape = (width, width, 2 * modes1, modes2)
        std = 1.0 / width
        weight = std * rng.standard_normal(shape) + 1j * std * rng.standard_normal(shape)
        self.weight = Parameter(weight.astype(complex_dtype(dtype)), f"{name}.spectral")
        self.bypass = Pointwise(width, width, rng, dtype, f"{name}.bypass")

    def spectral(self, h: Tensor) -> Tensor:
        return dc_ops.spectral_conv(h, self.weight, self.modes1, self.modes2)

    def __call__(self, h: Tensor) -> Tensor:
        return dc_ops.add(self.spectral(h), self.bypass(h))

    def parameters(self) -> List[Parameter]:
        return [self.weight] + self.bypass.parameters()
