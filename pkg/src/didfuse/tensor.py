"""Dense NCHW tensor operations with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects of rank 4 laid out as
(batch, channels, rows, cols). Storage is float32 by default; every
reduction (convolution sums, batch-norm statistics) accumulates in float64
and the result is cast back to the input dtype. Passing float64 tensors
keeps the whole computation in float64, which the gradient checks use.

Each forward op is a pure function; its backward counterpart takes the
forward inputs it needs and recomputes anything cheap instead of caching it.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import NumericError, ShapeError

KERNEL_SIZE = 3


class Padding(str, enum.Enum):
    ZERO = "zero"
    REFLECTION = "reflection"


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


class Activation(str, enum.Enum):
    PRELU = "prelu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


def _storage_dtype(*arrays):
    dtype = np.result_type(*arrays)
    return dtype if dtype in (np.float32, np.float64) else np.dtype(np.float32)


def check_tensor4(x, name="tensor", finite=False):
    """Validate a rank-4 array and return it as a float ndarray."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n, c, h, w), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension", x.shape)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float32)
    if finite and not np.isfinite(x).all():
        raise NumericError(f"{name} contains NaN or Inf")
    return x


# -- padding -----------------------------------------------------------------


def pad(x, padding):
    """Pad the two spatial dims by one pixel on every side."""
    padding = Padding(padding)
    if padding is Padding.ZERO:
        return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="constant")
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError("reflection padding needs h, w >= 2", x.shape)
    # numpy "reflect" does not repeat the edge: index -1 maps to 1
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")


def pad_backward(grad_padded, padding):
    """Adjoint of :func:`pad`: fold the border gradient back onto its source."""
    padding = Padding(padding)
    if padding is Padding.ZERO:
        return grad_padded[:, :, 1:-1, 1:-1].copy()
    g = grad_padded.copy()
    g[:, :, 2, :] += g[:, :, 0, :]
    g[:, :, -3, :] += g[:, :, -1, :]
    g[:, :, :, 2] += g[:, :, :, 0]
    g[:, :, :, -3] += g[:, :, :, -1]
    return g[:, :, 1:-1, 1:-1].copy()


# -- convolution -------------------------------------------------------------


def _check_conv_args(x, kernel, bias):
    x = check_tensor4(x, "input", finite=True)
    kernel = check_tensor4(kernel, "kernel")
    if kernel.shape[2:] != (KERNEL_SIZE, KERNEL_SIZE):
        raise ShapeError("kernel must be 3x3", kernel.shape)
    if kernel.shape[1] != x.shape[1]:
        raise ShapeError("kernel input channels do not match input", kernel.shape, x.shape)
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (kernel.shape[0],):
            raise ShapeError("bias length must equal kernel output channels", bias.shape, kernel.shape)
    return x, kernel, bias


def _shifted_slab(xt, dy, dx, h, w):
    # xt is the padded input laid out (c, n, h+2, w+2) in float64
    c, n = xt.shape[:2]
    return xt[:, :, dy:dy + h, dx:dx + w].reshape(c, n * h * w)


def conv2d_forward(x, kernel, bias, padding):
    """3x3, stride 1, pad 1 cross-correlation: output keeps the input's h, w.

    ``out[n, o, y, x] = bias[o] + sum_{i, dy, dx} kernel[o, i, dy, dx] * xpad[n, i, y+dy, x+dx]``
    """
    x, kernel, bias = _check_conv_args(x, kernel, bias)
    n, _, h, w = x.shape
    out_c = kernel.shape[0]
    dtype = _storage_dtype(x, kernel)
    xt = np.ascontiguousarray(pad(x, padding).transpose(1, 0, 2, 3), dtype=np.float64)
    # per-tap (out, in) matrices must be contiguous or matmul skips BLAS
    taps = np.ascontiguousarray(kernel.transpose(2, 3, 0, 1), dtype=np.float64)
    acc = np.zeros((out_c, n * h * w))
    for dy in range(KERNEL_SIZE):
        for dx in range(KERNEL_SIZE):
            acc += taps[dy, dx] @ _shifted_slab(xt, dy, dx, h, w)
    if bias is not None:
        acc += np.asarray(bias, dtype=np.float64)[:, None]
    return acc.reshape(out_c, n, h, w).transpose(1, 0, 2, 3).astype(dtype)


def conv2d_backward(grad_out, saved_input, kernel, padding):
    """Return ``(grad_input, grad_kernel, grad_bias)`` for :func:`conv2d_forward`."""
    x, kernel, _ = _check_conv_args(saved_input, kernel, None)
    n, c, h, w = x.shape
    out_c = kernel.shape[0]
    grad_out = check_tensor4(grad_out, "grad_out")
    if grad_out.shape != (n, out_c, h, w):
        raise ShapeError("grad_out does not match the forward output", grad_out.shape, (n, out_c, h, w))
    dtype = _storage_dtype(x, kernel)
    xt = np.ascontiguousarray(pad(x, padding).transpose(1, 0, 2, 3), dtype=np.float64)
    gt = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3), dtype=np.float64).reshape(out_c, n * h * w)
    taps_t = np.ascontiguousarray(kernel.transpose(2, 3, 1, 0), dtype=np.float64)

    grad_taps = np.empty((KERNEL_SIZE, KERNEL_SIZE, out_c, c))
    grad_xt = np.zeros_like(xt)
    for dy in range(KERNEL_SIZE):
        for dx in range(KERNEL_SIZE):
            grad_taps[dy, dx] = gt @ _shifted_slab(xt, dy, dx, h, w).T
            grad_xt[:, :, dy:dy + h, dx:dx + w] += (taps_t[dy, dx] @ gt).reshape(c, n, h, w)
    grad_kernel = grad_taps.transpose(2, 3, 0, 1)
    grad_input = pad_backward(grad_xt.transpose(1, 0, 2, 3), padding)
    grad_bias = gt.sum(axis=1)
    return grad_input.astype(dtype), grad_kernel.astype(dtype), grad_bias.astype(dtype)


# -- batch normalization -----------------------------------------------------


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode,
                      momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    Returns ``(output, new_running_mean, new_running_var)``. In eval mode the
    running statistics come back unchanged. The running variance is updated
    with the unbiased batch variance.
    """
    x = check_tensor4(x, "input", finite=True)
    mode = Mode(mode)
    dtype = x.dtype
    x64 = x.astype(np.float64)
    if mode is Mode.TRAIN:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count < 2:
            raise ShapeError("train-mode batch norm needs at least 2 values per channel", x.shape)
        mean = x64.mean(axis=(0, 2, 3))
        var = x64.var(axis=(0, 2, 3))
        new_mean = (1 - momentum) * np.asarray(running_mean, np.float64) + momentum * mean
        new_var = (1 - momentum) * np.asarray(running_var, np.float64) + momentum * var * count / (count - 1)
        new_mean = new_mean.astype(np.asarray(running_mean).dtype)
        new_var = new_var.astype(np.asarray(running_var).dtype)
    else:
        mean = np.asarray(running_mean, np.float64)
        var = np.asarray(running_var, np.float64)
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * np.asarray(gamma, np.float64)[None, :, None, None] + np.asarray(beta, np.float64)[None, :, None, None]
    return out.astype(dtype), new_mean, new_var


def batchnorm_backward(grad_out, saved_input, gamma, running_mean, running_var, mode, eps=1e-5):
    """Return ``(grad_input, grad_gamma, grad_beta)``."""
    x = check_tensor4(saved_input, "input")
    grad_out = check_tensor4(grad_out, "grad_out")
    if grad_out.shape != x.shape:
        raise ShapeError("grad_out does not match batch-norm input", grad_out.shape, x.shape)
    mode = Mode(mode)
    dtype = x.dtype
    x64 = x.astype(np.float64)
    g = grad_out.astype(np.float64)
    gamma64 = np.asarray(gamma, np.float64)[None, :, None, None]
    axes = (0, 2, 3)
    if mode is Mode.TRAIN:
        mean = x64.mean(axis=axes)
        var = x64.var(axis=axes)
    else:
        mean = np.asarray(running_mean, np.float64)
        var = np.asarray(running_var, np.float64)
    inv_std = (1.0 / np.sqrt(var + eps))[None, :, None, None]
    xhat = (x64 - mean[None, :, None, None]) * inv_std
    grad_gamma = (g * xhat).sum(axis=axes)
    grad_beta = g.sum(axis=axes)
    gxhat = g * gamma64
    if mode is Mode.TRAIN:
        grad_input = inv_std * (
            gxhat
            - gxhat.mean(axis=axes, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
        )
    else:
        grad_input = gxhat * inv_std
    return grad_input.astype(dtype), grad_gamma.astype(dtype), grad_beta.astype(dtype)


# -- activations -------------------------------------------------------------


def prelu_forward(x, slope):
    return np.where(x >= 0, x, x * np.asarray(slope, dtype=x.dtype)).astype(x.dtype)


def prelu_backward(grad_out, saved_input, slope):
    """Return ``(grad_input, grad_slope)``; the slope is one shared scalar."""
    neg = saved_input < 0
    grad_input = np.where(neg, grad_out * np.asarray(slope, dtype=grad_out.dtype), grad_out)
    grad_slope = np.sum(np.where(neg, grad_out.astype(np.float64) * saved_input, 0.0))
    return grad_input.astype(grad_out.dtype), grad_slope


def tanh_forward(x):
    return np.tanh(x)


def tanh_backward(grad_out, saved_output):
    return grad_out * (1 - saved_output * saved_output)


def sigmoid_forward(x):
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)


def sigmoid_backward(grad_out, saved_output):
    return grad_out * saved_output * (1 - saved_output)


def activation_forward(x, kind, slope=None):
    kind = Activation(kind)
    if kind is Activation.PRELU:
        return prelu_forward(x, slope)
    if kind is Activation.TANH:
        return tanh_forward(x)
    return sigmoid_forward(x)


def activation_backward(grad_out, saved_input, saved_output, kind, slope=None):
    """Return ``(grad_input, grad_slope)``; ``grad_slope`` is None except for PReLU."""
    kind = Activation(kind)
    if kind is Activation.PRELU:
        return prelu_backward(grad_out, saved_input, slope)
    if kind is Activation.TANH:
        return tanh_backward(grad_out, saved_output), None
    return sigmoid_backward(grad_out, saved_output), None


# -- channel concatenation ---------------------------------------------------


def concat_channels(a, b):
    a = check_tensor4(a, "a")
    b = check_tensor4(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError("concat needs matching n, h, w", a.shape, b.shape)
    return np.concatenate([a, b], axis=1)


def split_channels(grad, channels_a):
    """Backward of :func:`concat_channels`: ``(grad_a, grad_b)``."""
    if not 1 <= channels_a < grad.shape[1]:
        raise ShapeError(f"cannot split {grad.shape[1]} channels at {channels_a}", grad.shape)
    return grad[:, :channels_a].copy(), grad[:, channels_a:].copy()
