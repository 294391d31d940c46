"""Synthetic infrared/visible pairs for smoke tests and demos.

Both images share a smooth background. The infrared image adds a few bright
blob "targets"; the visible image adds oriented texture and hard edges.
"""

import numpy as np


def make_pair(seed, size=64):
    """Return ``(ir, vis)`` uint8 arrays of shape (size, size)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size

    background = 0.35 + 0.15 * (rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy)
    for _ in range(3):
        cy, cx = rng.uniform(0, 1, 2)
        width = rng.uniform(0.25, 0.5)
        background += rng.uniform(-0.15, 0.15) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))

    ir = 0.7 * background
    for _ in range(rng.integers(2, 4)):
        cy, cx = rng.uniform(0.15, 0.85, 2)
        r = rng.uniform(0.04, 0.1)
        ir += rng.uniform(0.35, 0.55) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r ** 2))

    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(6, 12)
    grating = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
    vis = background + 0.12 * grating
    y0, x0 = rng.integers(0, size // 2, 2)
    h, w = rng.integers(size // 6, size // 3, 2)
    vis[y0:y0 + h, x0:x0 + w] += rng.choice([-0.2, 0.2])
    vis += rng.normal(0, 0.01, vis.shape)

    def to8(a):
        return np.clip(np.floor(a * 255 + 0.5), 0, 255).astype(np.uint8)

    return to8(ir), to8(vis)


def make_pairs(n, size=64, seed=0):
    return [make_pair([seed, i], size) for i in range(n)]
