"""Shared helpers. The difference quotients here are deliberately separate
from the package's own finite-difference code so they can act as oracles."""

import numpy as np
import pytest

H = 1e-6


def num_grad(fn, x, h=H):
    x = np.asarray(x, dtype=float)
    out = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out.append((np.asarray(fn(x + e), dtype=float) - np.asarray(fn(x - e), dtype=float)) / (2 * h))
    return np.stack(out, axis=-1)


def second_directional(fn, x, v, h=1e-4):
    """d^2/dt^2 fn(x + t v) at t = 0."""
    x, v = np.asarray(x, float), np.asarray(v, float)
    return (np.asarray(fn(x + h * v)) - 2 * np.asarray(fn(x)) + np.asarray(fn(x - h * v))) / h ** 2


def rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.abs(a - b).max(initial=0.0) / max(1.0, float(np.abs(b).max(initial=0.0))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
