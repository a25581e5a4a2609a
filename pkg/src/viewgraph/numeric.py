"""Shared numerical primitives: stabilized softmax, its backward pass, sigmoid."""

import numpy as np


def stable_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with max-subtraction so large logits cannot overflow.

    Subtracting the per-row maximum is exact up to the usual shift
    invariance of softmax, so the result is unchanged mathematically.
    """
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def softmax_grad(output: np.ndarray, grad_output: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient w.r.t. the logits given softmax ``output`` and an upstream gradient.

    Computes y * (g - <g, y>) row-wise, the softmax Jacobian-vector product.
    A constant upstream gradient is annihilated exactly, matching the shift
    invariance of the forward pass.
    """
    inner = np.sum(grad_output * output, axis=axis, keepdims=True)
    return output * (grad_output - inner)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically safe logistic function, exact at large |x| (saturates to 0/1)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
