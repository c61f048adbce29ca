"""
The operation closure of the engine.

Every op computes its numpy result, checks it is finite, and records a node
with its vector-Jacobian product when an input is tracked. Complex gradients
follow the convention grad = dL/dRe + i*dL/dIm, so a complex-linear map y = A z
back-propagates as A^H g.

Fourier convention: rfft2 is the unnormalized forward transform over the last
two axes; irfft2 carries the 1/N factor.
"""
import math
from typing import Optional, Tuple

import numpy as np
from scipy.special import erf

from diffcore.dc_tape import record
from diffcore.dc_tensor import Tensor, check_finite, complex_dtype, real_dtype
from utils.errors import DegenerateTargetError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _fit(g: np.ndarray, like: Tensor) -> np.ndarray:
    """Casts an incoming gradient to the dtype of the input it flows into."""
    if not like.is_complex and np.iscomplexobj(g):
        g = g.real
    return g.astype(like.dtype, copy=False)


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = check_finite(a.data + b.data, "add")
    return record("add", out, [a, b], lambda g: (_fit(g, a), _fit(g, b)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    out = check_finite(a.data - b.data, "sub")
    return record("sub", out, [a, b], lambda g: (_fit(g, a), _fit(-g, b)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; complex operands give the complex product."""
    _same_shape("mul", a, b)
    out = check_finite(a.data * b.data, "mul")
    return record(
        "mul", out, [a, b],
        lambda g: (_fit(g * np.conj(b.data), a), _fit(g * np.conj(a.data), b)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    out = check_finite(a.data * c, "scale")
    return record("scale", out, [a], lambda g: (_fit(g * c, a),))


def pointwise(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Channel-wise affine map (1x1 convolution).

    x: (B, Ci, H, W), w: (Co, Ci), b: (Co,) -> (B, Co, H, W)
    """
    if x.data.ndim != 4 or w.data.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"pointwise: cannot map {x.shape} with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"pointwise: bias shape {b.shape} does not match weight {w.shape}")
    B, C, H, W = x.shape
    xf = x.data.reshape(B, C, H * W)
    out = np.matmul(w.data, xf).reshape(B, w.shape[0], H, W)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = check_finite(out, "pointwise")

    def vjp(g):
        gf = g.reshape(B, w.shape[0], H * W)
        gx = np.matmul(w.data.T, gf).reshape(B, C, H, W)
        gw = np.matmul(gf.transpose(1, 0, 2).reshape(w.shape[0], -1), xf.transpose(1, 0, 2).reshape(C, -1).T)
        grads = [_fit(gx, x), _fit(gw, w)]
        if b is not None:
            grads.append(_fit(g.sum(axis=(0, 2, 3)), b))
        return grads

    inputs = [x, w] + ([b] if b is not None else [])
    return record("pointwise", out, inputs, vjp)


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    out = check_finite(np.maximum(x.data, 0).astype(x.dtype), "relu")
    return record("relu", out, [x], lambda g: (_fit(g * positive, x),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = check_finite((x.data * cdf).astype(x.dtype), "gelu")

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (_fit(g * (cdf + x.data * pdf), x),)

    return record("gelu", out, [x], vjp)


def identity(x: Tensor) -> Tensor:
    return x


ACTIVATIONS = {"gelu": gelu, "relu": relu, "identity": identity}


def _half_weights(W: int, dtype) -> np.ndarray:
    """Multiplicity of each half-spectrum column in the full spectrum (W even)."""
    c = np.full(W // 2 + 1, 2.0, dtype=dtype)
    c[0] = 1.0
    c[-1] = 1.0
    return c


def rfft2(x: Tensor) -> Tensor:
    """Real-to-complex transform over the last two axes, unnormalized."""
    if x.is_complex:
        raise ShapeError("rfft2 expects a real tensor")
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise ShapeError(f"rfft2 needs even spatial axes, got {H}x{W}")
    out = check_finite(np.fft.rfft2(x.data).astype(complex_dtype(x.dtype)), "rfft2")
    c = _half_weights(W, real_dtype(x.dtype))

    def vjp(g):
        return (_fit(H * W * np.fft.irfft2(g / c, s=(H, W)), x),)

    return record("rfft2", out, [x], vjp)


def irfft2(z: Tensor, shape: Tuple[int, int]) -> Tensor:
    """Inverse of rfft2 back onto a real (H, W) grid, including the 1/N factor."""
    H, W = shape
    if H % 2 or W % 2 or z.shape[-2:] != (H, W // 2 + 1):
        raise ShapeError(f"irfft2: half-spectrum {z.shape[-2:]} does not match grid {H}x{W}")
    out = np.fft.irfft2(z.data, s=(H, W)).astype(real_dtype(z.dtype))
    out = check_finite(out, "irfft2")
    c = _half_weights(W, real_dtype(z.dtype))

    def vjp(g):
        return (_fit(c * np.fft.rfft2(g) / (H * W), z),)

    return record("irfft2", out, [z], vjp)


def complex_mix(x: Tensor, w: Tensor) -> Tensor:
    """
    Per-mode complex channel mixing, out[b,o,m,n] = sum_i x[b,i,m,n] * w[i,o,m,n].
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[0] or x.shape[2:] != w.shape[2:]:
        raise ShapeError(f"complex_mix: cannot mix {x.shape} with weight {w.shape}")
    xt = x.data.transpose(2, 3, 0, 1)
    wt = w.data.transpose(2, 3, 0, 1)
    out = check_finite(np.ascontiguousarray(np.matmul(xt, wt).transpose(2, 3, 0, 1)), "complex_mix")

    def vjp(g):
        gt = g.transpose(2, 3, 0, 1)
        gx = np.matmul(gt, np.conj(wt).swapaxes(-1, -2)).transpose(2, 3, 0, 1)
        gw = np.matmul(np.conj(xt).swapaxes(-1, -2), gt).transpose(2, 3, 0, 1)
        return _fit(gx, x), _fit(gw, w)

    return record("complex_mix", out, [x, w], vjp)


def truncate_modes(z: Tensor, m1: int, m2: int) -> Tensor:
    """Keeps rows [0, m1) and [H-m1, H) and columns [0, m2) of a half spectrum."""
    H, Wh = z.shape[-2:]
    if 2 * m1 > H or m2 > Wh or m1 < 1 or m2 < 1:
        raise ShapeError(f"truncate_modes: modes ({m1}, {m2}) exceed spectrum {H}x{Wh}")
    out = np.concatenate([z.data[..., :m1, :m2], z.data[..., H - m1:, :m2]], axis=-2)

    def vjp(g):
        full = np.zeros(z.shape, dtype=g.dtype)
        full[..., :m1, :m2] = g[..., :m1, :]
        full[..., H - m1:, :m2] = g[..., m1:, :]
        return (_fit(full, z),)

    return record("truncate_modes", out, [z], vjp)


def embed_modes(z: Tensor, H: int, Wh: int) -> Tensor:
    """Inverse of truncate_modes: places the retained corners into a zero spectrum."""
    m1, m2 = z.shape[-2] // 2, z.shape[-1]
    if 2 * m1 > H or m2 > Wh or z.shape[-2] % 2:
        raise ShapeError(f"embed_modes: {z.shape[-2:]} does not fit spectrum {H}x{Wh}")
    out = np.zeros(z.shape[:-2] + (H, Wh), dtype=z.dtype)
    out[..., :m1, :m2] = z.data[..., :m1, :]
    out[..., H - m1:, :m2] = z.data[..., m1:, :]

    def vjp(g):
        kept = np.concatenate([g[..., :m1, :m2], g[..., H - m1:, :m2]], axis=-2)
        return (_fit(kept, z),)

    return record("embed_modes", out, [z], vjp)


def spectral_conv(h: Tensor, weight: Tensor, m1: int, m2: int) -> Tensor:
    """Transform, mix the retained modes with weight, zero the rest, transform back."""
    H, W = h.shape[-2:]
    spectrum = truncate_modes(rfft2(h), m1, m2)
    mixed = complex_mix(spectrum, weight)
    return irfft2(embed_modes(mixed, H, W // 2 + 1), (H, W))


def mean(x: Tensor) -> Tensor:
    out = check_finite(np.asarray(x.data.mean(), dtype=x.dtype), "mean")
    n = x.size
    return record("mean", out, [x], lambda g: (_fit(np.full(x.shape, g / n, dtype=np.result_type(g, x.dtype)), x),))


def sum_all(x: Tensor) -> Tensor:
    out = check_finite(np.asarray(x.data.sum(), dtype=x.dtype), "sum")
    return record("sum_all", out, [x], lambda g: (_fit(np.full(x.shape, g, dtype=np.result_type(g, x.dtype)), x),))


def mse(pred: Tensor, target: Tensor) -> Tensor:
    _same_shape("mse", pred, target)
    diff = pred.data - target.data
    out = check_finite(np.asarray(np.mean(diff * diff), dtype=pred.dtype), "mse")
    n = pred.size

    def vjp(g):
        gp = (2.0 / n) * g * diff
        return _fit(gp, pred), _fit(-gp, target)

    return record("mse", out, [pred, target], vjp)


def relative_l2(pred: Tensor, target: Tensor) -> Tensor:
    """
    Mean over the leading (batch) axis of ||pred - target|| / ||target||.

    Samples where pred equals target contribute a zero gradient.
    """
    _same_shape("relative_l2", pred, target)
    B = pred.shape[0]
    axes = tuple(range(1, pred.data.ndim))
    diff = pred.data - target.data
    dn = np.sqrt(np.sum(diff * diff, axis=axes, keepdims=True))
    tn = np.sqrt(np.sum(target.data * target.data, axis=axes, keepdims=True))
    if np.any(tn == 0):
        raise DegenerateTargetError("relative_l2: target with zero norm")
    out = check_finite(np.asarray(np.mean(dn / tn), dtype=pred.dtype), "relative_l2")

    def vjp(g):
        safe = np.where(dn > 0, dn, 1.0)
        gp = np.where(dn > 0, diff / (safe * tn), 0.0) * (g / B)
        gt = -gp - (dn / tn ** 3) * target.data * (g / B)
        return _fit(gp, pred), _fit(gt, target)

    return record("relative_l2", out, [pred, target], vjp)
