"""Minimal reverse-mode autodiff engine (numpy, float64)."""

from . import functional, nn
from .functional import (
    cross_entropy,
    layer_norm,
    log_softmax,
    max_pool_time,
    multi_head_attention,
    scaled_dot_product_attention,
    smooth_l1,
    softmax,
)
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    cos,
    cumsum,
    div,
    exp,
    is_grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sin,
    softplus,
    sqrt,
    square,
    stack,
    sub,
    transpose,
    tsum,
)
