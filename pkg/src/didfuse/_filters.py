import numpy as np


def box_mean(a, radius):
    """Mean over a (2r+1)^2 window on the last two axes, replicate-edge padding.

    Window sums come from an integral image, so integer-valued inputs give
    exact sums before the single division.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    a = np.asarray(a, dtype=np.float64)
    k = 2 * radius + 1
    pad = [(0, 0)] * (a.ndim - 2) + [(radius, radius), (radius, radius)]
    p = np.pad(a, pad, mode="edge")
    s = np.cumsum(np.cumsum(p, axis=-2), axis=-1)
    s = np.pad(s, [(0, 0)] * (a.ndim - 2) + [(1, 0), (1, 0)])
    h, w = a.shape[-2:]
    total = s[..., k:k + h, k:k + w] - s[..., :h, k:k + w] - s[..., k:k + h, :w] + s[..., :h, :w]
    return total / (k * k)
