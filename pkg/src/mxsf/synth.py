"""Reproducible synthetic tensors.

The generator is SplitMix64 so streams can be reproduced in any language::

    state += 0x9E3779B97F4A7C15                     (mod 2**64)
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9        (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB        (mod 2**64)
    out = z ^ (z >> 31)

The initial state is the seed.  A uniform in [0, 1) is ``(out >> 11) * 2**-53``.
Normals use Box-Muller on consecutive uniform pairs ``(u1, u2)``:
``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``, one normal per pair.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)

DISTRIBUTIONS = ("uniform", "gaussian", "lognormal", "constant")


def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of SplitMix64 started at ``seed``."""
    with np.errstate(over="ignore"):
        state = np.uint64(seed % (1 << 64)) + GOLDEN * np.arange(1, n + 1, dtype=np.uint64)
        z = state
        z = (z ^ (z >> np.uint64(30))) * MIX1
        z = (z ^ (z >> np.uint64(27))) * MIX2
        return z ^ (z >> np.uint64(31))


def uniform(seed: int, n: int) -> np.ndarray:
    return (splitmix64(seed, n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def normal(seed: int, n: int) -> np.ndarray:
    u = uniform(seed, 2 * n).reshape(n, 2)
    return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])


def tensor(dist: str, rows: int, cols: int, seed: int = 0, sigma: float = 1.0) -> np.ndarray:
    """Synthetic ``rows x cols`` matrix.

    ``gaussian``: N(0, sigma^2).  ``lognormal``: random sign times
    ``2**(sigma * N(0, 1))``, i.e. sigma is measured in the log2 domain.
    ``uniform``: U(-sigma, sigma).  ``constant``: every entry ``sigma``.
    """
    n = rows * cols
    if dist == "gaussian":
        out = sigma * normal(seed, n)
    elif dist == "lognormal":
        mag = np.exp2(sigma * normal(seed, n))
        signs = np.where(uniform(seed ^ 0x5DEECE66D, n) < 0.5, -1.0, 1.0)
        out = signs * mag
    elif dist == "uniform":
        out = sigma * (2.0 * uniform(seed, n) - 1.0)
    elif dist == "constant":
        out = np.full(n, float(sigma))
    else:
        raise ValueError(f"unknown distribution {dist!r}; choose from {DISTRIBUTIONS}")
    return out.reshape(rows, cols)
