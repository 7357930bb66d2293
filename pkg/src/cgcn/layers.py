"""Forward and backward passes for the network layers.

Feature tensors are laid out ``(batch, channels, frames, joints)``. Every
``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes the cache.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BatchTooSmall,
    DimensionMismatch,
    InvalidLabel,
    KernelLargerThanSequence,
    MissingCache,
    NonFiniteActivation,
)
from .graph import PropagationMatrix

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteActivation(f"non-finite activation in {where}")


def _need(cache):
    if cache is None:
        raise MissingCache("backward called without a forward cache")
    return cache


# spatial graph convolution: Z = C_hat X Theta on every (batch, frame) slice


def spatial_conv_forward(x: np.ndarray, c_hat, theta: np.ndarray):
    c = c_hat.matrix if isinstance(c_hat, PropagationMatrix) else np.asarray(c_hat)
    b, cin, t, n = x.shape
    if c.shape != (n, n):
        raise DimensionMismatch(f"propagation is {c.shape}, input has {n} joints")
    if theta.shape[0] != cin:
        raise DimensionMismatch(f"weights expect {theta.shape[0]} channels, input has {cin}")
    # joints first so the propagation is one matrix product
    xj = x.transpose(3, 0, 2, 1).reshape(n, -1)
    with np.errstate(over="ignore", invalid="ignore"):
        a = (c @ xj).reshape(n * b * t, cin)
        z = a @ theta
    out = z.reshape(n, b, t, -1).transpose(1, 3, 2, 0)
    _check_finite(out, "spatial convolution")
    return np.ascontiguousarray(out), (c, a, theta, x.shape)


def spatial_conv_backward(grad_out: np.ndarray, cache):
    c, a, theta, shape = _need(cache)
    b, cin, t, n = shape
    g = grad_out.transpose(3, 0, 2, 1).reshape(n * b * t, -1)
    dtheta = a.T @ g
    da = (g @ theta.T).reshape(n, -1)
    dx = (c.T @ da).reshape(n, b, t, cin).transpose(1, 3, 2, 0)
    return np.ascontiguousarray(dx), dtheta


# temporal convolution along frames, shared across joints


def _as_kernel(kernel: np.ndarray, channels: int) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim == 1:
        # one kernel applied to every channel separately
        return np.eye(channels)[:, :, None] * kernel[None, None, :]
    return kernel


def temporal_conv_forward(x: np.ndarray, kernel: np.ndarray, stride: int = 1):
    """Zero-padded convolution over frames; ``kernel`` is ``(C_out, C_in, K)`` or a 1-D per-channel kernel.

    Output length is ``ceil(T / stride)``; stride 1 preserves ``T``.
    """
    b, cin, t, n = x.shape
    w = _as_kernel(kernel, cin)
    cout, wcin, k = w.shape
    if wcin != cin:
        raise DimensionMismatch(f"kernel expects {wcin} channels, input has {cin}")
    if k > t:
        raise KernelLargerThanSequence(f"temporal kernel {k} exceeds {t} frames")
    left = (k - 1) // 2
    t_out = math.ceil(t / stride)
    xp = np.pad(x, ((0, 0), (0, 0), (left, k - 1 - left), (0, 0)))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride]  # b, cin, t_out, n, k
    cols = win.transpose(0, 2, 3, 1, 4).reshape(b * t_out * n, cin * k)
    w2 = w.reshape(cout, cin * k)
    with np.errstate(over="ignore", invalid="ignore"):
        out = (cols @ w2.T).reshape(b, t_out, n, cout).transpose(0, 3, 1, 2)
    _check_finite(out, "temporal convolution")
    return np.ascontiguousarray(out), (cols, w, stride, x.shape, left)


def temporal_conv_backward(grad_out: np.ndarray, cache):
    cols, w, stride, shape, left = _need(cache)
    b, cin, t, n = shape
    cout, _, k = w.shape
    t_out = grad_out.shape[2]
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (g.T @ cols).reshape(cout, cin, k)
    dcols = (g @ w.reshape(cout, cin * k)).reshape(b, t_out, n, cin, k)
    dxp = np.zeros((b, cin, t + k - 1, n))
    span = stride * (t_out - 1) + 1
    for j in range(k):
        dxp[:, :, j : j + span : stride] += dcols[..., j].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dxp[:, :, left : left + t]), dw


def temporal_conv(x: np.ndarray, kernel: np.ndarray, stride: int = 1) -> np.ndarray:
    return temporal_conv_forward(x, kernel, stride)[0]


# batch normalization per channel over batch, frames and joints


def batch_norm_forward(
    x, gamma, beta, running_mean, running_var, mode="train", momentum=BN_MOMENTUM, eps=BN_EPS
):
    """Running statistics are updated in place in train mode."""
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchTooSmall("batch normalization needs at least 2 samples in train mode")
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=axes)
        xc = x - mean.reshape(shape)
        var = (xc * xc).mean(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std.reshape(shape)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var * (m / max(m - 1, 1))
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return out, (xhat, inv_std, gamma, mode)


def batch_norm_backward(grad_out, cache):
    xhat, inv_std, gamma, mode = _need(cache)
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    dgamma = (grad_out * xhat).sum(axis=axes)
    dbeta = grad_out.sum(axis=axes)
    scale = (gamma * inv_std).reshape(shape)
    if mode == "train":
        m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
        dx = scale * (
            grad_out - dbeta.reshape(shape) / m - xhat * dgamma.reshape(shape) / m
        )
    else:
        dx = scale * grad_out
    return dx, dgamma, dbeta


# pointwise layers


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out, mask):
    return grad_out * _need(mask)


def dropout_forward(x, p: float, mode: str = "train", rng=None):
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)``; identity in eval mode."""
    if mode != "train" or p == 0.0:
        return x, None
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


def global_average_pool_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_average_pool_backward(grad_out, shape):
    b, c, t, n = _need(shape)
    return np.broadcast_to(grad_out[:, :, None, None] / (t * n), shape).copy()


def linear_forward(x, weight, bias):
    return x @ weight + bias, x


def linear_backward(grad_out, x, weight):
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax probabilities and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    b, k = logits.shape
    if labels.shape != (b,) or np.any(labels < 0) or np.any(labels >= k):
        raise InvalidLabel(f"labels must be integers in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p = z - log_norm[:, None]
    loss = -log_p[np.arange(b), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(b), labels] -= 1.0
    return float(loss), grad / b


def relu(x):
    return np.maximum(x, 0.0)


def dropout(x, p: float, mode: str = "train", rng=None):
    return dropout_forward(x, p, mode, rng)[0]


def global_average_pool(x):
    return x.mean(axis=(2, 3))


def batch_norm(x, gamma, beta, running_mean, running_var, mode="train"):
    return batch_norm_forward(x, gamma, beta, running_mean, running_var, mode)[0]


def spatial_conv(x, c_hat, theta):
    return spatial_conv_forward(x, c_hat, theta)[0]
