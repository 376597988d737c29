"""Elementary numerics used throughout the model.

Everything is 64-bit float.  The functions here are the leaves of the
hand-written differentiation in :mod:`acmil.losses`; where a derivative is
needed it is stated next to the forward form:

    softmax   s = exp(x - max x) / sum(...)     ds_j = s_j (g_j - g . s)
    sigmoid   y = 1 / (1 + exp(-x))             dy = y (1 - y)
    tanh      y = tanh(x)                       dy = 1 - y^2
    relu      y = max(x, 0)                     dy = 1[x > 0]

``finite_diff_check`` is the independent oracle for those derivations: it
compares any analytic gradient against central differences of the actual
loss evaluation.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericsError


def require_finite(arr: np.ndarray, name: str) -> None:
    """Raise NumericsError identifying ``name`` if any entry is NaN/Inf."""
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values in {name}")


def softmax(logits) -> np.ndarray:
    """Normalised exponentials of a 1-d vector, max-subtracted for safety."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("softmax requires a non-empty 1-d vector")
    require_finite(x, "softmax input")
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-safe for any finite input
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def cosine_similarity(u, v) -> float:
    """u.v / (|u| |v|); in [0, 1] for nonnegative inputs."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("cosine_similarity requires two equal-length vectors")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine_similarity is undefined for a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def stable_argsort_desc(values) -> np.ndarray:
    """Indices of ``values`` in descending order; ties keep ascending index."""
    v = np.asarray(values, dtype=np.float64)
    return np.argsort(-v, kind="stable")


def finite_diff_check(
    fn: Callable[[], float],
    params: Sequence[np.ndarray],
    analytic_grads: Sequence[np.ndarray],
    eps: float,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``fn`` evaluates the scalar objective from the *current contents* of
    ``params`` (the arrays are perturbed in place and restored), so any
    stochastic element inside it must be frozen for the duration of the
    check.  The error at each coordinate is
    |g_fd - g_an| / max(1, |g_fd|, |g_an|) with
    g_fd = (fn(t + eps e_i) - fn(t - eps e_i)) / (2 eps).
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if len(params) != len(analytic_grads):
        raise ValueError("params and analytic_grads must align")
    max_err = 0.0
    for arr, grad in zip(params, analytic_grads):
        if arr.shape != grad.shape:
            raise ValueError("gradient shape mismatch")
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(fn())
            flat[i] = orig - eps
            f_minus = float(fn())
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericsError("objective returned a non-finite value")
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            err = abs(g_fd - gflat[i]) / max(1.0, abs(g_fd), abs(gflat[i]))
            if err > max_err:
                max_err = err
    return max_err
