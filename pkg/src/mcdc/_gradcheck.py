"""
Central finite differences for verifying the analytic gradients of #mcdc._nn. Only meaningful in
64-bit precision.
"""

import typing as t

import numpy as np


def numerical_gradient(func: t.Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """
    Approximate the gradient of the scalar function *func* at *x* with central differences of step *eps*.
    *x* is restored after each perturbation.
    """

    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x, flat_grad = x.reshape(-1), grad.reshape(-1)
    for index in range(flat_x.size):
        original = flat_x[index]
        flat_x[index] = original + eps
        upper = func(x)
        flat_x[index] = original - eps
        lower = func(x)
        flat_x[index] = original
        flat_grad[index] = (upper - lower) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """`|a - n| / max(|a| + |n|, floor)` in the Euclidean norm; 0 when both gradients vanish."""

    difference = float(np.linalg.norm(np.ravel(analytic) - np.ravel(numeric)))
    scale = float(np.linalg.norm(np.ravel(analytic)) + np.linalg.norm(np.ravel(numeric)))
    if scale < floor:
        return difference
    return difference / scale
