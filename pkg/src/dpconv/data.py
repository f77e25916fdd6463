"""Procedural training textures: stripes, checkers and linear gradients.

Images are (n, 3, size, size) float64 in [-1, 1], fully determined by the
generator passed in.
"""
import numpy as np


def _colors(rng, k):
    return rng.uniform(-1.0, 1.0, size=(k, 3, 1, 1))


def stripes(rng, size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(4, size / 2)
    phase = rng.uniform(0, period)
    t = (np.cos(theta) * xx + np.sin(theta) * yy + phase) % period < period / 2
    a, b = _colors(rng, 2)
    return np.where(t, a, b)


def checkers(rng, size):
    yy, xx = np.mgrid[0:size, 0:size]
    cell = int(rng.integers(3, max(4, size // 4)))
    dy, dx = rng.integers(0, cell, size=2)
    t = ((yy + dy) // cell + (xx + dx) // cell) % 2 == 0
    a, b = _colors(rng, 2)
    return np.where(t, a, b)


def gradient(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    t = (t - t.min()) / max(np.ptp(t), 1e-12)
    a, b = _colors(rng, 2)
    return a * (1 - t) + b * t


KINDS = (stripes, checkers, gradient)


def synthetic_batch(rng, n, size):
    out = np.empty((n, 3, size, size))
    for i in range(n):
        out[i] = KINDS[int(rng.integers(len(KINDS)))](rng, size)
    return out
