"""Shared test utilities: finite differences and random valid inputs."""

import numpy as np

from ccrf import NodeGraph, assemble


def central_diff(fn, x, step=1e-5):
    """Central finite differences of ``fn()`` w.r.t. ``x``, mutated in place."""
    assert x.dtype == np.float64
    grad = np.zeros(x.size)
    flat = x.reshape(-1)  # view: perturbations must reach the caller's array
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn()
        flat[i] = orig - step
        lo = fn()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(x.shape)


def grad_rel_err(analytic, numeric):
    """Infinity-norm error of the bundle relative to the numeric scale."""
    a = np.concatenate([np.asarray(g, dtype=np.float64).reshape(-1) for g in analytic])
    b = np.concatenate([np.asarray(g, dtype=np.float64).reshape(-1) for g in numeric])
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-6))


def random_affinity(rng, n, scale=1.0):
    """A valid affinity matrix: symmetric, nonnegative, zero diagonal."""
    r = rng.uniform(0.0, scale, size=(n, n))
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 0.0)
    return r


def random_system(rng, n, scale=1.0):
    return assemble(random_affinity(rng, n, scale))


def random_graph(rng, n, feature_dim=4):
    return NodeGraph(
        n,
        rng.normal(size=(n, feature_dim)),
        rng.uniform(0.0, 1.0, size=(n, 2)),
    )


def model_param_fd(model, loss_fn, step=1e-5):
    """Finite differences of ``loss_fn()`` w.r.t. every model parameter."""
    out = {}
    for name, value in model.parameters().items():
        if value.ndim == 0:
            flat = value.reshape(1)
            out[name] = central_diff(lambda: loss_fn(), flat, step)[0]
        else:
            out[name] = central_diff(lambda: loss_fn(), value, step)
    return out
