"""Reference implementations written independently of the package code."""

import math

import numpy as np


def dense_forward(layers, x):
    """Forward pass over a list of dense (W, b) pairs, one point at a time."""
    h = np.asarray(x, dtype=float)
    for i, (w, b) in enumerate(layers):
        h = np.asarray(w, dtype=float) @ h + np.asarray(b, dtype=float)
        if i < len(layers) - 1:
            h = np.where(h > 0, h, 0.0)
    return h


def random_dense_layers(rng, in_dim, widths, density=0.7):
    layers = []
    prev = in_dim
    for w in widths:
        mat = rng.normal(size=(w, prev)) * (rng.random((w, prev)) < density)
        bias = rng.normal(size=w) * (rng.random(w) < density)
        layers.append((mat, bias))
        prev = w
    return layers


def nonzeros(layers):
    return sum(int(np.count_nonzero(w)) + int(np.count_nonzero(b)) for w, b in layers)


def normal_cdf(v):
    return 0.5 * (1.0 + math.erf(v / math.sqrt(2.0)))


def bs_call(spot, strike, vol, horizon):
    """Driftless lognormal call price."""
    s = vol * math.sqrt(horizon)
    up = (math.log(spot / strike) + 0.5 * s * s) / s
    return spot * normal_cdf(up) - strike * normal_cdf(up - s)


def euler_scalar(drift, diffusion, x0, horizon, n_steps, increments):
    """Scalar Euler recursion with explicit Brownian increments."""
    h = horizon / n_steps
    x = float(x0)
    out = [x]
    for n in range(n_steps):
        x = x + drift(x) * h + diffusion(x) * increments[n]
        out.append(x)
    return np.array(out)
