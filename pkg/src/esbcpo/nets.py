"""Flat-parameter tanh MLPs with hand-written backward and tangent passes.

Everything operates on a single flat float64 vector so trust-region updates
are plain vector arithmetic. No autodiff framework; the three passes
(forward, VJP, JVP) cover every gradient/Fisher computation in the package.
"""

from __future__ import annotations

import numpy as np


from functools import lru_cache


def layer_shapes(sizes):
    """[(in, out), ...] for consecutive layer sizes."""
    return list(zip(sizes[:-1], sizes[1:]))


@lru_cache(maxsize=None)
def param_count(sizes) -> int:
    return sum((i + 1) * o for i, o in layer_shapes(sizes))


def unpack(theta: np.ndarray, sizes):
    """Views (W, b) per layer into the flat vector. W is (in, out)."""
    out, k = [], 0
    for i, o in layer_shapes(sizes):
        W = theta[k : k + i * o].reshape(i, o)
        b = theta[k + i * o : k + (i + 1) * o]
        out.append((W, b))
        k += (i + 1) * o
    return out


def orthogonal_init(rng: np.random.Generator, sizes, hidden_gain=np.sqrt(2.0), out_gain=0.01) -> np.ndarray:
    """Orthogonal weight init, zero biases, flat layout matching unpack()."""
    chunks = []
    shapes = layer_shapes(sizes)
    for li, (i, o) in enumerate(shapes):
        a = rng.standard_normal((max(i, o), min(i, o)))
        q, r = np.linalg.qr(a)
        q *= np.sign(np.diag(r))  # deterministic sign convention
        W = q if i >= o else q.T
        gain = out_gain if li == len(shapes) - 1 else hidden_gain
        chunks.append((gain * W).ravel())
        chunks.append(np.zeros(o))
    return np.concatenate(chunks)


def forward(theta: np.ndarray, sizes, x: np.ndarray):
    """Batched forward pass. x is (n, in); returns (y, cache of activations)."""
    acts = [np.atleast_2d(np.asarray(x, dtype=float))]
    layers = unpack(theta, sizes)
    h = acts[0]
    for li, (W, b) in enumerate(layers):
        z = h @ W + b
        h = z if li == len(layers) - 1 else np.tanh(z)
        acts.append(h)
    return acts[-1], acts


def backward(theta: np.ndarray, sizes, acts, dy: np.ndarray) -> np.ndarray:
    """VJP: gradient of sum_n <dy[n], y[n]> w.r.t. theta (summed over batch)."""
    layers = unpack(theta, sizes)
    grads = [None] * len(layers)
    d = np.atleast_2d(dy)
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        gW = acts[li].T @ d
        gb = d.sum(axis=0)
        grads[li] = (gW, gb)
        if li > 0:
            d = (d @ W.T) * (1.0 - acts[li] ** 2)
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def jvp(theta: np.ndarray, sizes, acts, v: np.ndarray) -> np.ndarray:
    """JVP: directional derivative of the output along parameter tangent v."""
    layers = unpack(theta, sizes)
    vlayers = unpack(v, sizes)
    t = np.zeros_like(acts[0])
    for li, ((W, _), (vW, vb)) in enumerate(zip(layers, vlayers)):
        s = t @ W + acts[li] @ vW + vb
        t = s if li == len(layers) - 1 else (1.0 - acts[li + 1] ** 2) * s
    return t


def finite_diff_grad(f, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function; the gradient oracle."""
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        g[i] = (f(theta + e) - f(theta - e)) / (2.0 * step)
    return g
