"""Pure-NumPy kernel implementations.

Semantics mirror the compiled versions in ``_ckernels``. np.add.at applies
updates sequentially in element order, matching the compiled loop exactly.
"""
import numpy as np


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> np.ndarray:
    """Adds src[e] into out[idx[e]] for every e, in increasing e. Returns out."""
    np.add.at(out, idx, src)
    return out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D array. Rows may contain -inf (masked) entries."""
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    s = np.sum(e, axis=1, keepdims=True)
    return e / s


def softmax_grad_rows(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward of softmax_rows: dx = y * (dy - sum(y * dy, row))."""
    dot = np.sum(y * dy, axis=1, keepdims=True)
    return y * (dy - dot)
