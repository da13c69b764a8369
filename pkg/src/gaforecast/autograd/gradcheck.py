"""Central finite-difference gradients for checking backward rules."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(fn: Callable[[], Tensor], wrt: Tensor, h: float = 1e-6, indices=None) -> np.ndarray:
    """d fn() / d wrt by central differences, perturbing ``wrt.data`` in place.

    ``indices`` restricts the perturbed entries (flat indices); others stay 0.
    """
    flat = wrt.data.reshape(-1)
    out = np.zeros_like(flat)
    todo = range(flat.size) if indices is None else indices
    with no_grad():
        for i in todo:
            old = flat[i]
            flat[i] = old + h
            fp = float(fn().data)
            flat[i] = old - h
            fm = float(fn().data)
            flat[i] = old
            out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(wrt.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10,
                   zero_tol: float = 0.0) -> float:
    """||a - n|| / max(||a|| + ||n||, floor).

    When both norms sum to less than ``zero_tol`` the gradient is treated as
    structurally zero and 0 is returned; finite-difference noise makes a
    relative comparison meaningless there.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    total = np.linalg.norm(a) + np.linalg.norm(n)
    if total < zero_tol:
        return 0.0
    return float(np.linalg.norm(a - n) / max(total, floor))


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-6,
                    zero_tol: float = 1e-6) -> float:
    """Worst per-input relative error between backward() and finite differences."""
    for t in inputs:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    worst = 0.0
    for t, a in zip(inputs, analytic):
        worst = max(worst, relative_error(a, numerical_grad(fn, t, h), zero_tol=zero_tol))
    return worst
