"""Convolution, ReLU and batch-norm primitives with analytic backward passes.

The public functions take channels-first tensors: (batch, C, H, W), or
(C, H, W) for a single sample. Internally convolution runs channels-last
(NHWC): with the channel axis contiguous, materialising the im2col patch
matrix is a cache-friendly copy and the whole layer reduces to one BLAS
matmul. Forward functions return an opaque cache consumed by the matching
backward function. Convolution is same-padded, stride 1 (the network never
pools or strides).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected a 3-D or 4-D tensor, got shape {x.shape}")
    return x, False


def kernel_to_matrix(kernel: np.ndarray) -> np.ndarray:
    """(C_out, C_in, k, k) kernel as a (k*k*C_in, C_out) matmul operand."""
    c_out, c_in, k, _ = kernel.shape
    return np.ascontiguousarray(kernel.transpose(2, 3, 1, 0).reshape(k * k * c_in, c_out))


def matrix_to_kernel(w_mat: np.ndarray, c_out: int, c_in: int, k: int) -> np.ndarray:
    return np.ascontiguousarray(w_mat.reshape(k, k, c_in, c_out).transpose(3, 2, 0, 1))


def conv2d_nhwc(x: np.ndarray, w_mat: np.ndarray, bias: np.ndarray, k: int):
    """Same-padded stride-1 convolution on (B, H, W, C_in).

    ``w_mat`` is the (k*k*C_in, C_out) form from :func:`kernel_to_matrix`.
    Returns (output, cols) where ``cols`` is the (B*H*W, k*k*C_in) patch
    matrix reused by the backward pass. Computes in the dtype of ``x``
    (float32 for the training fast path, float64 for reference checks).
    """
    b, h, w, c_in = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    # windows over (H, W): shape (B, H, W, C, k, k); move C innermost so the
    # flattening copy walks contiguous channel runs
    windows = np.moveaxis(sliding_window_view(xp, (k, k), axis=(1, 2)), 3, -1)
    cols = windows.reshape(b * h * w, k * k * c_in)
    out = cols @ w_mat + bias
    return out.reshape(b, h, w, w_mat.shape[1]), cols


def conv2d_nhwc_backward(grad_out: np.ndarray, cols: np.ndarray, w_mat: np.ndarray,
                         x_shape: tuple, k: int):
    """Gradients of conv2d_nhwc: (d_input, d_w_mat, d_bias)."""
    b, h, w, c_in = x_shape
    pad = (k - 1) // 2
    g2 = grad_out.reshape(b * h * w, -1)
    d_w_mat = cols.T @ g2
    d_bias = g2.sum(axis=0)
    d_cols = (g2 @ w_mat.T).reshape(b, h, w, k, k, c_in)
    d_xp = np.zeros((b, h + 2 * pad, w + 2 * pad, c_in), dtype=grad_out.dtype)
    for di in range(k):
        for dj in range(k):
            d_xp[:, di:di + h, dj:dj + w, :] += d_cols[:, :, :, di, dj, :]
    d_x = d_xp[:, pad:pad + h, pad:pad + w, :] if pad else d_xp
    return d_x, d_w_mat, d_bias


def conv2d(x, kernel: np.ndarray, bias: np.ndarray, stride: int = 1):
    """Same-padded 2-D cross-correlation on channels-first input.

    ``kernel`` has shape (C_out, C_in, k, k) with odd k; ``bias`` (C_out,).
    Returns (output, cache) where output matches the input's spatial shape.
    """
    if stride != 1:
        raise ValueError("only stride 1 is supported")
    xb, squeeze = _as_batch(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ValueError(f"kernel must be (C_out, C_in, k, k), got {kernel.shape}")
    c_out, c_in, k, _ = kernel.shape
    if k % 2 != 1:
        raise ValueError("kernel size must be odd for same padding")
    if bias.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.shape}")
    if xb.shape[1] != c_in:
        raise ValueError(f"input has {xb.shape[1]} channels, kernel expects {c_in}")
    x_nhwc = np.ascontiguousarray(xb.transpose(0, 2, 3, 1))
    w_mat = kernel_to_matrix(kernel)
    out_nhwc, cols = conv2d_nhwc(x_nhwc, w_mat, bias, k)
    out = np.ascontiguousarray(out_nhwc.transpose(0, 3, 1, 2))
    cache = (cols, w_mat, x_nhwc.shape, kernel.shape, squeeze)
    if squeeze:
        out = out[0]
    return out, cache


def conv2d_backward(grad_out, cache):
    """Gradients of a conv2d call: (d_input, d_kernel, d_bias)."""
    cols, w_mat, x_shape, kernel_shape, squeeze = cache
    c_out, c_in, k, _ = kernel_shape
    g, _ = _as_batch(grad_out)
    g_nhwc = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
    d_x_nhwc, d_w_mat, d_bias = conv2d_nhwc_backward(g_nhwc, cols, w_mat, x_shape, k)
    d_kernel = matrix_to_kernel(d_w_mat, c_out, c_in, k)
    d_x = np.ascontiguousarray(d_x_nhwc.transpose(0, 3, 1, 2))
    if squeeze:
        d_x = d_x[0]
    return d_x, d_kernel, d_bias


def relu(x):
    """Elementwise max(0, x); the subgradient at 0 is taken as 0."""
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    mask = x > 0
    return np.where(mask, x, x.dtype.type(0.0)), mask


def relu_backward(grad_out, mask):
    return np.asarray(grad_out) * mask


def batch_norm_axes(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float,
    momentum: float,
    channel_axis: int,
):
    """Batch norm over every axis except ``channel_axis``; layout-agnostic core.

    Arithmetic follows the dtype of ``x``; running statistics are always
    returned as float64.
    """
    axes = tuple(a for a in range(x.ndim) if a != channel_axis)
    shape = [1] * x.ndim
    shape[channel_axis] = x.shape[channel_axis]
    gamma = np.asarray(gamma, dtype=x.dtype)
    beta = np.asarray(beta, dtype=x.dtype)
    if training:
        count = x.size // x.shape[channel_axis]
        if count < 2:
            raise ValueError(
                f"batch norm in training mode needs at least 2 values per channel, got {count}"
            )
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)  # biased estimator inside the normalisation
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        new_rm = momentum * running_mean + (1.0 - momentum) * mean
        new_rv = momentum * running_var + (1.0 - momentum) * var * count / (count - 1)
        cache = (x_hat, gamma, inv_std, count, channel_axis)
    else:
        inv_std = 1.0 / np.sqrt(np.asarray(running_var, dtype=x.dtype) + x.dtype.type(eps))
        x_hat = (x - np.asarray(running_mean, dtype=x.dtype).reshape(shape)) * inv_std.reshape(shape)
        new_rm = np.array(running_mean, dtype=np.float64, copy=True)
        new_rv = np.array(running_var, dtype=np.float64, copy=True)
        cache = (x_hat, gamma, inv_std, None, channel_axis)
    out = gamma.reshape(shape) * x_hat + beta.reshape(shape)
    return out, cache, new_rm, new_rv


def batch_norm_axes_backward(grad_out: np.ndarray, cache):
    x_hat, gamma, inv_std, count, channel_axis = cache
    if count is None:
        raise ValueError("backward is only defined for training-mode batch norm")
    axes = tuple(a for a in range(x_hat.ndim) if a != channel_axis)
    shape = [1] * x_hat.ndim
    shape[channel_axis] = x_hat.shape[channel_axis]
    d_gamma = (grad_out * x_hat).sum(axis=axes)
    d_beta = grad_out.sum(axis=axes)
    d_xhat = grad_out * gamma.reshape(shape)
    # compact form for the biased-variance normaliser
    d_x = (inv_std.reshape(shape) / count) * (
        count * d_xhat
        - d_xhat.sum(axis=axes).reshape(shape)
        - x_hat * (d_xhat * x_hat).sum(axis=axes).reshape(shape)
    )
    return d_x, d_gamma, d_beta


def batch_norm(
    x,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.9,
):
    """Per-channel batch normalisation of (B, C, H, W) over the (B, H, W) axes.

    Training mode normalises with the biased batch variance and returns
    updated running statistics (momentum 0.9, running variance stored
    unbiased); eval mode normalises with the running statistics. Returns
    (output, cache, new_running_mean, new_running_var).
    """
    xb, squeeze = _as_batch(x)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    c = xb.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    out, cache, new_rm, new_rv = batch_norm_axes(
        xb, gamma, beta, running_mean, running_var, training, eps, momentum,
        channel_axis=1,
    )
    cache = (*cache, squeeze)
    if squeeze:
        out = out[0]
    return out, cache, new_rm, new_rv


def batch_norm_backward(grad_out, cache):
    """Gradients of a training-mode batch_norm call: (d_input, d_gamma, d_beta)."""
    *core_cache, squeeze = cache
    g, _ = _as_batch(grad_out)
    d_x, d_gamma, d_beta = batch_norm_axes_backward(g, tuple(core_cache))
    if squeeze:
        d_x = d_x[0]
    return d_x, d_gamma, d_beta
