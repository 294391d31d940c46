"""Training objective: decomposition loss plus reconstruction loss.

All squared and absolute norms are mean-normalized (divided by the element
count) so that the tanh in the decomposition term does not saturate on
large feature maps. Every ``*_grad`` function returns ``(value, grads)``
with gradients in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 0.05
    alpha2: float = 2.0
    alpha3: float = 2.0
    alpha4: float = 10.0
    lam: float = 5.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted loss terms plus the weighted total.

    ``total = background - alpha1 * detail + alpha2 * recon_ir
    + alpha3 * recon_vis + alpha4 * gradient_term``; the first two are the
    tanh-bounded feature-map gaps.
    """

    total: float
    decomp_background_term: float
    decomp_detail_term: float
    recon_ir: float
    recon_vis: float
    gradient_term: float

    def reassemble(self, weights: LossWeights) -> float:
        return (self.decomp_background_term - weights.alpha1 * self.decomp_detail_term
                + weights.alpha2 * self.recon_ir + weights.alpha3 * self.recon_vis
                + weights.alpha4 * self.gradient_term)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _same_shape(*arrays):
    shapes = [np.shape(a) for a in arrays]
    if any(s != shapes[0] for s in shapes):
        raise ShapeError("loss inputs must share one shape", *shapes)
    return [np.asarray(a, dtype=np.float64) for a in arrays]


def msd(a, b):
    """Mean squared difference."""
    a, b = _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def _msd_grad(a, b):
    # d msd / d a; the gradient w.r.t. b is its negative
    return 2.0 * (a - b) / a.size


# -- decomposition loss ------------------------------------------------------


def decomposition_loss(b_v, b_i, d_v, d_i, alpha1=LossWeights.alpha1):
    """``tanh(msd(B_V, B_I)) - alpha1 * tanh(msd(D_V, D_I))``.

    Returns ``(value, background_term, detail_term)``.
    """
    b_v, b_i, d_v, d_i = _same_shape(b_v, b_i, d_v, d_i)
    bg = math.tanh(float(np.mean((b_v - b_i) ** 2)))
    det = math.tanh(float(np.mean((d_v - d_i) ** 2)))
    return bg - alpha1 * det, bg, det


def decomposition_loss_grad(b_v, b_i, d_v, d_i, alpha1=LossWeights.alpha1):
    """Return ``((value, bg, det), {"b_v", "b_i", "d_v", "d_i"})``."""
    b_v, b_i, d_v, d_i = _same_shape(b_v, b_i, d_v, d_i)
    bg = math.tanh(float(np.mean((b_v - b_i) ** 2)))
    det = math.tanh(float(np.mean((d_v - d_i) ** 2)))
    g_b = (1 - bg * bg) * _msd_grad(b_v, b_i)
    g_d = -alpha1 * (1 - det * det) * _msd_grad(d_v, d_i)
    return (bg - alpha1 * det, bg, det), {"b_v": g_b, "b_i": -g_b, "d_v": g_d, "d_i": -g_d}


# -- SSIM --------------------------------------------------------------------


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter(x, win):
    """Separable 'valid' correlation over the last two axes."""
    x = sliding_window_view(x, win.size, axis=-2) @ win
    return sliding_window_view(x, win.size, axis=-1) @ win


def _filter_adjoint(g, win):
    """Adjoint of :func:`_filter`: scatter back to the full-size grid."""
    k = win.size

    def scatter(g, axis):
        shape = list(g.shape)
        shape[axis] += k - 1
        out = np.zeros(shape)
        for j in range(k):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(j, j + g.shape[axis])
            out[tuple(idx)] += win[j] * g
        return out

    return scatter(scatter(g, -1), -2)


def _ssim_stats(x, y, data_range):
    x, y = _same_shape(x, y)
    if x.ndim < 2 or x.shape[-1] < SSIM_WINDOW or x.shape[-2] < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}", x.shape)
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    win = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x, mu_y = _filter(x, win), _filter(y, win)
    sxx = _filter(x * x, win) - mu_x ** 2
    syy = _filter(y * y, win) - mu_y ** 2
    sxy = _filter(x * y, win) - mu_x * mu_y
    a1 = 2 * mu_x * mu_y + c1
    a2 = 2 * sxy + c2
    b1 = mu_x ** 2 + mu_y ** 2 + c1
    b2 = sxx + syy + c2
    return x, y, win, (mu_x, mu_y, a1, a2, b1, b2)


def ssim(x, y, data_range=1.0):
    """Mean SSIM over an 11x11 Gaussian window (sigma 1.5), valid positions only."""
    *_, (_, _, a1, a2, b1, b2) = _ssim_stats(x, y, data_range)
    return float(np.mean(a1 * a2 / (b1 * b2)))


def ssim_grad(x, y, data_range=1.0):
    """Return ``(ssim, d ssim / d y)``."""
    x, y, win, (mu_x, mu_y, a1, a2, b1, b2) = _ssim_stats(x, y, data_range)
    s = a1 * a2 / (b1 * b2)
    m = s.size
    # partials of the mean map w.r.t. the local statistics of y
    d_mu_y = (2 * mu_x * a2 / (b1 * b2) - 2 * mu_y * s / b1) / m
    d_syy = -s / b2 / m
    d_sxy = 2 * a1 / (b1 * b2) / m
    # syy = E[y^2] - mu_y^2 and sxy = E[xy] - mu_x mu_y
    d_mu_y_total = d_mu_y - 2 * mu_y * d_syy - mu_x * d_sxy
    grad = (_filter_adjoint(d_mu_y_total, win)
            + 2 * y * _filter_adjoint(d_syy, win)
            + x * _filter_adjoint(d_sxy, win))
    return float(np.mean(s)), grad


def ssim_loss(x, y, data_range=1.0):
    return (1.0 - ssim(x, y, data_range)) / 2.0


# -- reconstruction terms ----------------------------------------------------


def reconstruction_pair_loss(x, x_hat, lam=LossWeights.lam):
    """``msd(x, x_hat) + lam * (1 - SSIM(x, x_hat)) / 2``."""
    return msd(x, x_hat) + lam * ssim_loss(x, x_hat)


def reconstruction_pair_loss_grad(x, x_hat, lam=LossWeights.lam):
    """Return ``(value, d value / d x_hat)``."""
    x, x_hat = _same_shape(x, x_hat)
    s, g_s = ssim_grad(x, x_hat)
    value = float(np.mean((x - x_hat) ** 2)) + lam * (1 - s) / 2
    return value, _msd_grad(x_hat, x) - lam / 2 * g_s


def _diffs(v):
    if v.shape[-1] < 2 or v.shape[-2] < 2:
        raise ShapeError("gradient operator needs h, w >= 2", v.shape)
    return v[..., :, 1:] - v[..., :, :-1], v[..., 1:, :] - v[..., :-1, :]


def gradient_l1(v, v_hat):
    """Mean |horizontal difference gap| plus mean |vertical difference gap|."""
    v, v_hat = _same_shape(v, v_hat)
    (gx, gy), (hx, hy) = _diffs(v), _diffs(v_hat)
    return float(np.mean(np.abs(gx - hx)) + np.mean(np.abs(gy - hy)))


def gradient_l1_grad(v, v_hat):
    """Return ``(value, d value / d v_hat)``; sign(0) is taken as 0."""
    v, v_hat = _same_shape(v, v_hat)
    (gx, gy), (hx, hy) = _diffs(v), _diffs(v_hat)
    ex, ey = gx - hx, gy - hy
    value = float(np.mean(np.abs(ex)) + np.mean(np.abs(ey)))
    sx, sy = np.sign(ex) / ex.size, np.sign(ey) / ey.size
    grad = np.zeros_like(v_hat)
    grad[..., :, 1:] -= sx
    grad[..., :, :-1] += sx
    grad[..., 1:, :] -= sy
    grad[..., :-1, :] += sy
    return value, grad


# -- total -------------------------------------------------------------------


def total_loss(ir, ir_hat, vis, vis_hat, dec_ir, dec_vis, weights=LossWeights()) -> LossBreakdown:
    """Assemble the full objective. ``dec_*`` expose ``background`` and ``detail``."""
    _, bg, det = decomposition_loss(dec_vis.background, dec_ir.background, dec_vis.detail, dec_ir.detail,
                                    weights.alpha1)
    r_ir = reconstruction_pair_loss(ir, ir_hat, weights.lam)
    r_vis = reconstruction_pair_loss(vis, vis_hat, weights.lam)
    g = gradient_l1(vis, vis_hat)
    return _breakdown(bg, det, r_ir, r_vis, g, weights)


def _breakdown(bg, det, r_ir, r_vis, g, weights):
    total = bg - weights.alpha1 * det + weights.alpha2 * r_ir + weights.alpha3 * r_vis + weights.alpha4 * g
    return LossBreakdown(total, bg, det, r_ir, r_vis, g)


def total_loss_grad(ir, ir_hat, vis, vis_hat, dec_ir, dec_vis, weights=LossWeights()):
    """Return ``(LossBreakdown, grads)``.

    ``grads`` has keys ``ir_hat``, ``vis_hat``, ``b_ir``, ``b_vis``,
    ``d_ir``, ``d_vis``.
    """
    (_, bg, det), g_dec = decomposition_loss_grad(
        dec_vis.background, dec_ir.background, dec_vis.detail, dec_ir.detail, weights.alpha1)
    r_ir, g_ir = reconstruction_pair_loss_grad(ir, ir_hat, weights.lam)
    r_vis, g_vis = reconstruction_pair_loss_grad(vis, vis_hat, weights.lam)
    grad_term, g_grad = gradient_l1_grad(vis, vis_hat)
    grads = {
        "ir_hat": weights.alpha2 * g_ir,
        "vis_hat": weights.alpha3 * g_vis + weights.alpha4 * g_grad,
        "b_ir": g_dec["b_i"],
        "b_vis": g_dec["b_v"],
        "d_ir": g_dec["d_i"],
        "d_vis": g_dec["d_v"],
    }
    return _breakdown(bg, det, r_ir, r_vis, grad_term, weights), grads
