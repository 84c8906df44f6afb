"""Dense float64 array primitives used by the ConvLSTM stack.

Grids are plain numpy arrays shaped ``(channels, height, width)``; any number
of leading batch axes is allowed. Kernels are shaped
``(out_channels, in_channels, kh, kw)``.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes are inconsistent."""


class NonFiniteError(ValueError):
    """Raised when an array contains NaN or infinite values."""


def as_grid(x, name="input"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 3:
        raise ShapeError(f"{name}: expected (..., channels, height, width), got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def same_padding(k):
    """Return ``(before, after)`` zero padding that keeps the spatial size for kernel size ``k``.

    Even kernels put the extra padding on the trailing side, so a 2-wide
    kernel pads nothing before and one element after.
    """
    before = (k - 1) // 2
    return before, k - 1 - before


def _pad(x, kh, kw):
    top, bottom = same_padding(kh)
    left, right = same_padding(kw)
    h, w = x.shape[-2:]
    xp = np.zeros(x.shape[:-2] + (h + top + bottom, w + left + right))
    xp[..., top:top + h, left:left + w] = x
    return xp


def _patches(x, kh, kw):
    """Shifted views of the padded input, shaped (..., C*kh*kw, h*w)."""
    h, w = x.shape[-2:]
    xp = _pad(x, kh, kw)
    cols = np.stack([xp[..., a:a + h, b:b + w] for a in range(kh) for b in range(kw)], axis=-3)
    return cols.reshape(x.shape[:-3] + (x.shape[-3] * kh * kw, h * w))


def conv2d_same(x, kernel, bias=None, *, validate=True):
    """Same-padded 2-D cross-correlation.

    ``out[..., o, i, j] = bias[o] + sum_{c,a,b} xpad[..., c, i+a, j+b] * kernel[o, c, a, b]``
    """
    if validate:
        x = as_grid(x)
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 4:
            raise ShapeError(f"kernel must be 4-D (out, in, kh, kw), got shape {kernel.shape}")
        if kernel.shape[1] != x.shape[-3]:
            raise ShapeError(
                f"kernel expects {kernel.shape[1]} input channels, input has {x.shape[-3]}"
            )
        check_finite(kernel, "kernel")
        if bias is not None:
            bias = np.asarray(bias, dtype=np.float64)
            if bias.shape != (kernel.shape[0],):
                raise ShapeError(f"bias must have shape ({kernel.shape[0]},), got {bias.shape}")
            check_finite(bias, "bias")
    out_ch, _, kh, kw = kernel.shape
    h, w = x.shape[-2:]
    out = kernel.reshape(out_ch, -1) @ _patches(x, kh, kw)
    out = out.reshape(x.shape[:-3] + (out_ch, h, w))
    if bias is not None:
        out += bias[:, None, None]
    return out


def conv2d_input_grad(dout, kernel):
    """Gradient of :func:`conv2d_same` w.r.t. its input, given the output gradient."""
    out_ch, in_ch, kh, kw = kernel.shape
    h, w = dout.shape[-2:]
    lead = dout.shape[:-3]
    dcols = kernel.reshape(out_ch, -1).T @ dout.reshape(lead + (out_ch, h * w))
    dcols = dcols.reshape(lead + (in_ch, kh, kw, h, w))
    top = same_padding(kh)[0]
    left = same_padding(kw)[0]
    dxp = np.zeros(lead + (in_ch, h + kh - 1, w + kw - 1))
    for a in range(kh):
        for b in range(kw):
            dxp[..., a:a + h, b:b + w] += dcols[..., a, b, :, :]
    return dxp[..., top:top + h, left:left + w]


def conv2d_kernel_grad(x, dout, kernel_shape):
    """Gradient of :func:`conv2d_same` w.r.t. the kernel; leading axes are summed out."""
    out_ch, _, kh, kw = kernel_shape
    cols = _patches(x, kh, kw)
    cols = cols.reshape((-1,) + cols.shape[-2:])
    d = dout.reshape((-1, out_ch, cols.shape[-1]))
    dk = np.tensordot(d, cols, axes=([0, 2], [0, 2]))
    return dk.reshape(kernel_shape)


def conv2d_same_backward(x, kernel, dout):
    """Gradients of :func:`conv2d_same` w.r.t. its input, kernel and bias.

    Leading axes of ``x``/``dout`` are summed out of the kernel and bias grads.
    """
    dx = conv2d_input_grad(dout, kernel)
    dk = conv2d_kernel_grad(x, dout, kernel.shape)
    db = dout.sum(axis=tuple(range(dout.ndim - 3)) + (-2, -1))
    return dx, dk, db


def sigmoid(x):
    # tanh form: one ufunc, no overflow, saturates to exactly 0 or 1
    return 0.5 + 0.5 * np.tanh(0.5 * np.asarray(x, dtype=np.float64))


def tanh_act(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_grad(x):
    # derivative at exactly 0 is taken as 0
    return (np.asarray(x) > 0).astype(np.float64)


ACTIVATIONS = {
    "tanh": (tanh_act, lambda pre, out: 1.0 - out * out),
    "relu": (relu, lambda pre, out: relu_grad(pre)),
}


def hadamard(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard operands differ in shape: {a.shape} vs {b.shape}")
    return a * b
