"""Classical two-scale decomposition and fusion, used as a comparison baseline.

Images are float arrays in 8-bit intensity units ([0, 255]). Backgrounds are
snapped to a 2**-32 grid so that ``background + detail`` reproduces any
input on that grid (including every 8-bit image) bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ._filters import box_mean
from .errors import NumericError, ShapeError

GRID_BITS = 32
MAX_VALUE = 255.0


@dataclass(frozen=True)
class Optimize:
    lam: float = 5.0


@dataclass(frozen=True)
class Box:
    radius: int = 15


Method = Union[Optimize, Box]


@dataclass
class ClassicalDecomposition:
    background: np.ndarray
    detail: np.ndarray
    lam: float | None = None


def _image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("expected a 2-D grayscale image", img.shape)
    return img


def _snap(b):
    return np.ldexp(np.round(np.ldexp(b, GRID_BITS)), -GRID_BITS)


def smoothing_operator(shape, lam):
    """Matvec for ``I + lam * (Dx^T Dx + Dy^T Dy)`` with valid forward differences."""

    def apply(u):
        u = u.reshape(shape)
        out = u.copy()
        gx = u[:, 1:] - u[:, :-1]
        gy = u[1:, :] - u[:-1, :]
        out[:, 1:] += lam * gx
        out[:, :-1] -= lam * gx
        out[1:, :] += lam * gy
        out[:-1, :] -= lam * gy
        return out

    return apply


def conjugate_gradient(apply, b, tol=1e-8, max_iter=None):
    """Solve ``A x = b`` for symmetric positive definite ``A`` given as a matvec.

    Stops when ``||r|| <= tol * ||b||``; raises ``NumericError`` with the
    final residual if ``max_iter`` is hit first.
    """
    max_iter = 10 * b.size if max_iter is None else max_iter
    x = np.zeros_like(b)
    r = b - apply(x)
    p = r.copy()
    rr = float(np.vdot(r, r))
    target = tol * float(np.linalg.norm(b))
    for _ in range(max_iter):
        if np.sqrt(rr) <= target:
            return x
        ap = apply(p)
        alpha = rr / float(np.vdot(p, ap))
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = float(np.vdot(r, r))
        p = r + (rr_new / rr) * p
        rr = rr_new
    if np.sqrt(rr) <= target:
        return x
    raise NumericError(f"conjugate gradient did not converge: residual {np.sqrt(rr):.3e} after {max_iter} iterations")


def background_optimize(img, lam, tol=1e-8, max_iter=None):
    """Minimize ``||I - B||^2 + lam (||gx * B||^2 + ||gy * B||^2)`` over B."""
    img = _image(img)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if lam == 0:
        return img.copy()
    b = conjugate_gradient(smoothing_operator(img.shape, lam), img, tol, max_iter)
    return _snap(b)


def background_boxfilter(img, radius):
    return _snap(box_mean(_image(img), radius))


def decompose(img, method: Method = Optimize()) -> ClassicalDecomposition:
    img = _image(img)
    if isinstance(method, Optimize):
        background, lam = background_optimize(img, method.lam), method.lam
    elif isinstance(method, Box):
        background, lam = background_boxfilter(img, method.radius), None
    else:
        raise TypeError(f"unknown decomposition method {method!r}")
    return ClassicalDecomposition(background, img - background, lam)


def fuse_details(d_a, d_b):
    """Per-pixel max-absolute selection; ties keep ``d_a``."""
    return np.where(np.abs(d_a) >= np.abs(d_b), d_a, d_b)


def classical_fuse(ir, vis, method: Method = Optimize()):
    """Average the backgrounds, max-abs the details, add, clamp to [0, 255]."""
    ir, vis = _image(ir), _image(vis)
    if ir.shape != vis.shape:
        raise ShapeError("infrared and visible images differ in size", ir.shape, vis.shape)
    a, b = decompose(ir, method), decompose(vis, method)
    fused = (a.background + b.background) / 2 + fuse_details(a.detail, b.detail)
    return np.clip(fused, 0.0, MAX_VALUE)
