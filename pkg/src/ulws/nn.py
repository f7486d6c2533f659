"""Differentiable 1D kernels: forward passes with cached-activation backwards.

All kernels are pure functions over numpy arrays in (batch, channels,
length) order, follow the dtype of their inputs (float32 for training,
float64 for gradient checking), and use fixed reduction orders so equal
inputs give bit-identical outputs.

Padding is SAME everywhere: output length is ceil(L / stride), zeros split
evenly with the extra sample on the right. Max pooling pads on the right
with -inf so padding never wins a window.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DegenerateBatch, ShapeMismatch

Mode = Literal["train", "infer"]


def ceil_div(n: int, d: int) -> int:
    return -(-n // d)


def _same_pad(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """(pad_left, pad_right, out_length) for SAME padding."""
    out_length = ceil_div(length, stride)
    total = max((out_length - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2, out_length


# --- separable convolution -------------------------------------------------

@dataclass
class SepConvParams:
    depthwise: np.ndarray  # (K, M)
    pointwise: np.ndarray  # (M, N)
    bias: np.ndarray  # (N,)
    stride: int = 1


@dataclass
class SepConvCache:
    params: SepConvParams
    x_padded: np.ndarray
    dw_out: np.ndarray
    pad_left: int
    in_length: int


def sepconv1d_forward(x: np.ndarray, p: SepConvParams) -> tuple[np.ndarray, SepConvCache]:
    """Depthwise K-tap per-channel filter, then 1x1 channel mix plus bias."""
    b, m, length = x.shape
    k, mk = p.depthwise.shape
    if mk != m or p.pointwise.shape[0] != m:
        raise ShapeMismatch(f"input has {m} channels, kernel expects {mk}")
    left, right, out_length = _same_pad(length, k, p.stride)
    xp = np.pad(x, ((0, 0), (0, 0), (left, right))) if left or right else x
    span = (out_length - 1) * p.stride + 1
    dw = np.empty((b, m, out_length), dtype=x.dtype)
    np.multiply(xp[:, :, 0:span : p.stride], p.depthwise[0][None, :, None], out=dw)
    for tap in range(1, k):
        dw += xp[:, :, tap : tap + span : p.stride] * p.depthwise[tap][None, :, None]
    y = np.moveaxis(np.moveaxis(dw, 1, 2) @ p.pointwise, 2, 1) + p.bias[None, :, None]
    return y, SepConvCache(p, xp, dw, left, length)


def sepconv1d_backward(
    cache: SepConvCache, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Adjoints of both stages: (grad_x, grad_depthwise, grad_pointwise, grad_bias)."""
    p = cache.params
    k = p.depthwise.shape[0]
    out_length = grad_out.shape[2]
    span = (out_length - 1) * p.stride + 1

    grad_bias = grad_out.sum(axis=(0, 2))
    g_t = np.moveaxis(grad_out, 1, 2)  # (B, L_out, N)
    grad_pointwise = np.tensordot(np.moveaxis(cache.dw_out, 1, 2), g_t, axes=([0, 1], [0, 1]))
    grad_dw = np.moveaxis(g_t @ p.pointwise.T, 2, 1)  # (B, M, L_out)

    grad_depthwise = np.empty_like(p.depthwise)
    grad_xp = np.zeros_like(cache.x_padded)
    for tap in range(k):
        window = cache.x_padded[:, :, tap : tap + span : p.stride]
        grad_depthwise[tap] = np.einsum("bml,bml->m", window, grad_dw)
        grad_xp[:, :, tap : tap + span : p.stride] += grad_dw * p.depthwise[tap][None, :, None]
    grad_x = grad_xp[:, :, cache.pad_left : cache.pad_left + cache.in_length]
    return grad_x, grad_depthwise, grad_pointwise, grad_bias


# --- standard convolution ----------------------------------------------------

@dataclass
class ConvParams:
    kernel: np.ndarray  # (K, M, N)
    bias: np.ndarray  # (N,)
    stride: int = 1


@dataclass
class ConvCache:
    params: ConvParams
    x_padded: np.ndarray
    pad_left: int
    in_length: int


def conv1d_forward(x: np.ndarray, p: ConvParams) -> tuple[np.ndarray, ConvCache]:
    b, m, length = x.shape
    k, mk, n = p.kernel.shape
    if mk != m:
        raise ShapeMismatch(f"input has {m} channels, kernel expects {mk}")
    left, right, out_length = _same_pad(length, k, p.stride)
    xp = np.pad(x, ((0, 0), (0, 0), (left, right))) if left or right else x
    span = (out_length - 1) * p.stride + 1
    y_t = np.zeros((b, out_length, n), dtype=x.dtype)
    for tap in range(k):
        y_t += np.moveaxis(xp[:, :, tap : tap + span : p.stride], 1, 2) @ p.kernel[tap]
    return np.moveaxis(y_t, 2, 1) + p.bias[None, :, None], ConvCache(p, xp, left, length)


def conv1d_backward(
    cache: ConvCache, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = cache.params
    k = p.kernel.shape[0]
    out_length = grad_out.shape[2]
    span = (out_length - 1) * p.stride + 1

    grad_bias = grad_out.sum(axis=(0, 2))
    g_t = np.moveaxis(grad_out, 1, 2)  # (B, L_out, N)
    grad_kernel = np.empty_like(p.kernel)
    grad_xp = np.zeros_like(cache.x_padded)
    for tap in range(k):
        window_t = np.moveaxis(cache.x_padded[:, :, tap : tap + span : p.stride], 1, 2)
        grad_kernel[tap] = np.tensordot(window_t, g_t, axes=([0, 1], [0, 1]))
        grad_xp[:, :, tap : tap + span : p.stride] += np.moveaxis(g_t @ p.kernel[tap].T, 2, 1)
    grad_x = grad_xp[:, :, cache.pad_left : cache.pad_left + cache.in_length]
    return grad_x, grad_kernel, grad_bias


# --- batch normalization -----------------------------------------------------

@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-3
    momentum: float = 0.99  # decay of the running statistics


@dataclass
class BatchNormCache:
    params: BatchNormParams
    x_hat: np.ndarray
    inv_std: np.ndarray
    mode: Mode


def batchnorm_forward(
    x: np.ndarray, p: BatchNormParams, mode: Mode, update_running: bool = True
) -> tuple[np.ndarray, BatchNormCache]:
    """Normalize per channel over (batch, length).

    Train mode uses batch statistics and decays the running ones (unless
    update_running is off, e.g. while finite-differencing); infer mode
    normalizes with the stored running statistics.
    """
    b, _, length = x.shape
    if mode == "train":
        if b * length < 2:
            raise DegenerateBatch(f"need at least 2 values per feature, got {b * length}")
        mean = x.mean(axis=(0, 2))
        centered = x - mean[None, :, None]
        var = (centered * centered).mean(axis=(0, 2))
        if update_running:
            mom = p.momentum
            p.running_mean[...] = mom * p.running_mean + (1 - mom) * mean
            p.running_var[...] = mom * p.running_var + (1 - mom) * var
    else:
        centered = x - p.running_mean[None, :, None]
        var = p.running_var
    inv_std = 1.0 / np.sqrt(var + np.asarray(p.epsilon, dtype=x.dtype))
    x_hat = centered
    x_hat *= inv_std[None, :, None]
    y = p.gamma[None, :, None] * x_hat + p.beta[None, :, None]
    return y, BatchNormCache(p, x_hat, inv_std, mode)


def batchnorm_backward(
    cache: BatchNormCache, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(grad_x, grad_gamma, grad_beta); train mode routes gradient through
    the batch mean and variance as well."""
    p = cache.params
    grad_beta = grad_out.sum(axis=(0, 2))
    grad_gamma = (grad_out * cache.x_hat).sum(axis=(0, 2))
    scale = (p.gamma * cache.inv_std)[None, :, None]
    if cache.mode == "infer":
        return grad_out * scale, grad_gamma, grad_beta
    # grad_x = inv_std * (g_hat - mean(g_hat) - x_hat * mean(g_hat * x_hat))
    g_hat = grad_out * p.gamma[None, :, None]
    g_hat_mean = g_hat.mean(axis=(0, 2), keepdims=True)
    proj = (g_hat * cache.x_hat).mean(axis=(0, 2), keepdims=True)
    grad_x = g_hat
    grad_x -= g_hat_mean
    grad_x -= cache.x_hat * proj
    grad_x *= cache.inv_std[None, :, None]
    return grad_x, grad_gamma, grad_beta


# --- activations, pooling, head ----------------------------------------------

def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = x > 0  # subgradient 0 at exactly 0
    return x * mask, mask


def relu_backward(mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * mask


@dataclass
class MaxPoolCache:
    argmax: np.ndarray  # within-window offset of the (first) maximum
    pool_size: int
    stride: int
    in_length: int
    padded_length: int


def maxpool1d_forward(
    x: np.ndarray, pool_size: int = 2, stride: int = 2
) -> tuple[np.ndarray, MaxPoolCache]:
    b, c, length = x.shape
    out_length = ceil_div(length, stride)
    span = (out_length - 1) * stride + 1
    padded = max(length, (out_length - 1) * stride + pool_size)
    if padded > length:
        xp = np.pad(x, ((0, 0), (0, 0), (0, padded - length)), constant_values=-np.inf)
    else:
        xp = x
    y = xp[:, :, 0:span:stride].copy()
    argmax = np.zeros(y.shape, dtype=np.int8)
    for k in range(1, pool_size):
        cand = xp[:, :, k : k + span : stride]
        better = cand > y  # strict: ties resolve to the first maximum
        argmax[better] = k
        np.maximum(y, cand, out=y)
    return y, MaxPoolCache(argmax, pool_size, stride, length, padded)


def maxpool1d_backward(cache: MaxPoolCache, grad_out: np.ndarray) -> np.ndarray:
    b, c, out_length = grad_out.shape
    span = (out_length - 1) * cache.stride + 1
    grad_xp = np.zeros((b, c, cache.padded_length), dtype=grad_out.dtype)
    for k in range(cache.pool_size):
        grad_xp[:, :, k : k + span : cache.stride] += grad_out * (cache.argmax == k)
    return grad_xp[:, :, : cache.in_length]


def global_avg_pool_forward(x: np.ndarray) -> tuple[np.ndarray, int]:
    return x.mean(axis=2), x.shape[2]


def global_avg_pool_backward(in_length: int, grad_out: np.ndarray) -> np.ndarray:
    return np.repeat((grad_out / in_length)[:, :, None], in_length, axis=2)


@dataclass
class DenseParams:
    weight: np.ndarray  # (In, Out)
    bias: np.ndarray  # (Out,)


def dense_forward(x: np.ndarray, p: DenseParams) -> tuple[np.ndarray, np.ndarray]:
    if x.shape[1] != p.weight.shape[0]:
        raise ShapeMismatch(f"input width {x.shape[1]} != weight rows {p.weight.shape[0]}")
    return x @ p.weight + p.bias, x


def dense_backward(
    p: DenseParams, x: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return grad_out @ p.weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def dropout_forward(
    x: np.ndarray, rate: float, mode: Mode, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout: kept elements are scaled by 1/(1-rate) so the
    expectation is unchanged; infer mode (and rate 0) is the identity."""
    if mode == "infer" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
    mask = (rng.random(x.shape, dtype=draw_dtype) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask: np.ndarray | None, grad_out: np.ndarray) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise max-subtracted softmax."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent_forward(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch, with max-subtracted softmax."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    loss = -log_probs[np.arange(len(labels)), labels].mean()
    return float(loss), np.exp(log_probs)


def softmax_xent_backward(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)
