"""Central finite-difference oracle shared by the layer and t-SNE tests."""

import numpy as np


def central_diff(f, x, h=1e-4):
    """Elementwise d f / d x of a scalar function by central differences.

    Mutates entries of ``x`` in place while probing, restoring each one,
    so ``f`` must read ``x`` afresh on every call.
    """
    x = np.asarray(x)
    assert x.dtype == np.float64, "finite differences need float64"
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        f_plus = f()
        flat_x[i] = orig - h
        f_minus = f()
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def rel_error(analytic, numeric):
    """Max-norm relative disagreement between two gradient arrays."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return np.abs(analytic - numeric).max() / scale
