"""
Dense tensors and trainable parameters.

A Tensor wraps a C-contiguous numpy array (float32/float64 or complex64/complex128)
and, when produced under an active tape, the id of the node that produced it.
"""
from typing import Optional

import numpy as np

from utils.errors import NonFiniteError, ShapeError

_ALLOWED = (np.float32, np.float64, np.complex64, np.complex128)


def as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.type not in _ALLOWED:
        if np.iscomplexobj(arr):
            arr = arr.astype(np.complex128)
        else:
            arr = arr.astype(np.float64)
    return np.ascontiguousarray(arr)


def check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value produced by '{op}'")
    return arr


def real_dtype(dtype) -> np.dtype:
    return np.empty(0, dtype=dtype).real.dtype


def complex_dtype(dtype) -> np.dtype:
    return np.complex64 if np.dtype(dtype) in (np.dtype(np.float32), np.dtype(np.complex64)) else np.complex128


class Tensor:
    __slots__ = ("data", "node", "tape")

    def __init__(self, data, dtype=None):
        self.data = as_array(data, dtype)
        self.node: Optional[int] = None
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return self.data.reshape(()).item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class Parameter(Tensor):
    """
    Trainable leaf tensor carrying its gradient accumulator and Adam state.

    Frozen parameters (requires_grad False) behave like constants on the tape.
    """

    __slots__ = ("name", "grad", "m", "v", "step", "requires_grad")

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, dtype)
        self.name = name
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def zero_grad(self):
        self.grad[...] = 0

    def assign(self, value):
        value = np.asarray(value)
        if value.shape != self.data.shape:
            raise ShapeError(f"parameter '{self.name}' expects shape {self.data.shape}, got {value.shape}")
        self.data[...] = value.astype(self.data.dtype)

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape}, dtype={self.dtype})"
