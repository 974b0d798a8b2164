"""Central finite-difference gradient checks for the autodiff engine."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| scaled by the larger of the two gradients' max-abs (at least ``floor``)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_function(build: Callable[[ad.Tensor], ad.Tensor], x: np.ndarray, h: float = 1e-5):
    """Compare reverse-mode and finite-difference gradients of a scalar function.

    ``build`` maps an input tensor to a tensor; non-scalar outputs are reduced
    with a fixed random projection so every output entry is exercised.
    Returns ``(relative_error, analytic, numeric)``.
    """
    x = np.array(x, dtype=np.float64)
    probe = build(ad.Tensor(x))
    weights = np.random.default_rng(12345).normal(size=probe.shape)

    def scalar(t: ad.Tensor) -> ad.Tensor:
        out = build(t)
        return ad.sum_(out * weights)

    xt = ad.Tensor(x, requires_grad=True)
    ad.backward(scalar(xt))
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x)
    numeric = numerical_gradient(lambda v: scalar(ad.Tensor(v)).item(), x, h)
    return relative_error(analytic, numeric), analytic, numeric
