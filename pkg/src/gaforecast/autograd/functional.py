"""Fused differentiable operations: normalisation, pooling, attention, losses."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigurationError, DimensionError, EmptyInputError
from .tensor import Tensor, as_tensor, make, matmul, reshape, scale, transpose

LAYER_NORM_EPS = 1e-5


def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    x = as_tensor(x)
    if not -x.ndim <= axis < max(x.ndim, 1):
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = np.exp(x.data - np.max(x.data, axis=axis, keepdims=True))
    y = z / np.sum(z, axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return make(y, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return make(out, (x,), backward)


def layer_norm(x, gain=None, bias=None, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then apply gain/bias."""
    x = as_tensor(x)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    parents = [x]
    gd = None
    out = xhat
    if gain is not None:
        gain = as_tensor(gain)
        gd = gain.data
        out = out * gd
        parents.append(gain)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        dxhat = g * gd if gd is not None else g
        dx = inv / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        grads = [dx]
        lead = tuple(range(g.ndim - 1))
        if gain is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return grads

    return make(out, parents, backward)


def max_pool_time(x, axis: int = -2) -> Tensor:
    """Maximum over the time axis; ties route the gradient to the first index."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"max_pool_time expects (..., T, D), got {x.shape}")
    if x.shape[axis] == 0:
        raise EmptyInputError("max_pool_time over an empty time axis")
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)

    def backward(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, idx, np.expand_dims(g, axis), axis=axis)
        return (dx,)

    return make(np.squeeze(out, axis=axis), (x,), backward)


def scaled_dot_product_attention(q, k, v) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    scores = scale(matmul(q, k.swapaxes(-1, -2)), 1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, t, d = x.shape
    if d % n_heads:
        raise ConfigurationError(f"feature width {d} not divisible by {n_heads} heads")
    h = reshape(x, (*lead, t, n_heads, d // n_heads))
    axes = list(range(h.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return transpose(h, tuple(axes))


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dh = x.shape
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return reshape(transpose(x, tuple(axes)), (*lead, t, h * dh))


def multi_head_attention(q, k, v, n_heads: int) -> Tensor:
    """Split (..., T, D) inputs into heads, attend per head, concatenate.

    Input and output projections are the caller's job (see ``nn.MultiHeadAttention``).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] % n_heads:
        raise ConfigurationError(f"feature width {q.shape[-1]} not divisible by {n_heads} heads")
    out = scaled_dot_product_attention(split_heads(q, n_heads), split_heads(k, n_heads), split_heads(v, n_heads))
    return merge_heads(out)


def smooth_l1(pred, target, beta: float = 1.0) -> Tensor:
    """Mean Huber-style loss: 0.5 r^2 / beta inside |r| < beta, |r| - beta/2 outside."""
    pred = as_tensor(pred)
    tdata = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != tdata.shape:
        raise DimensionError(f"smooth_l1 shape mismatch: {pred.shape} vs {tdata.shape}")
    if beta <= 0:
        raise ConfigurationError("smooth_l1 beta must be positive")
    r = pred.data - tdata
    a = np.abs(r)
    inside = a < beta
    loss = np.where(inside, 0.5 * r * r / beta, a - 0.5 * beta)
    n = max(r.size, 1)

    def backward(g):
        return (g * np.where(inside, r / beta, np.sign(r)) / n,)

    return make(np.asarray(loss.sum() / n), (pred,), backward)


def cross_entropy(logits, target) -> Tensor:
    """Mean of -log softmax(logits)[target] over all leading positions.

    ``logits`` has shape (..., k); ``target`` is an int or an int array of shape (...).
    """
    logits = as_tensor(logits)
    k = logits.shape[-1]
    tgt = np.asarray(target, dtype=np.intp)
    if tgt.shape != logits.shape[:-1]:
        raise DimensionError(f"target shape {tgt.shape} does not match logits {logits.shape}")
    if np.any(tgt < 0) or np.any(tgt >= k):
        raise IndexError(f"target index out of range for {k} classes")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)
    n = max(tgt.size, 1)

    def backward(g):
        p = np.exp(logp)
        np.put_along_axis(p, tgt[..., None], np.take_along_axis(p, tgt[..., None], axis=-1) - 1.0, axis=-1)
        return (g * p / n,)

    return make(np.asarray(-picked.sum() / n), (logits,), backward)
