"""Finite-difference and brute-force oracles shared by the tests."""

import numpy as np

EPS = 1e-3
REL_TOL = 1e-3


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, np.float64)
    numeric = np.asarray(numeric, np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(f, x, eps=EPS):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        up = f(x)
        x[idx] = orig - eps
        down = f(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * eps)
    return grad


def directional_derivative(f, x, direction, eps=EPS):
    x = np.asarray(x, dtype=np.float64)
    return (f(x + eps * direction) - f(x - eps * direction)) / (2 * eps)


def reflect_index(i, n):
    if i < 0:
        return -i
    if i >= n:
        return 2 * (n - 1) - i
    return i


def conv_oracle(x, kernel, bias, padding):
    """Seven nested loops over (n, o, y, x, i, dy, dx)."""
    n_, c_, h_, w_ = x.shape
    o_ = kernel.shape[0]
    out = np.zeros((n_, o_, h_, w_))
    for n in range(n_):
        for o in range(o_):
            for y in range(h_):
                for xx in range(w_):
                    acc = float(bias[o])
                    for i in range(c_):
                        for dy in range(3):
                            for dx in range(3):
                                yy, xi = y + dy - 1, xx + dx - 1
                                if padding == "zero":
                                    if not (0 <= yy < h_ and 0 <= xi < w_):
                                        continue
                                else:
                                    yy, xi = reflect_index(yy, h_), reflect_index(xi, w_)
                                acc += float(kernel[o, i, dy, dx]) * float(x[n, i, yy, xi])
                    out[n, o, y, xx] = acc
    return out


# -- end-to-end network oracle -----------------------------------------------


def e2e_loss_and_signature(params, ir, vis, weights):
    """Re-assemble the training forward pass and return ``(total, kink_signature)``.

    The signature records which side of every non-differentiable point
    (PReLU at 0, |.| in the gradient term) each unit sits on. A central
    difference is only a valid oracle when the signature is identical at
    both ends of its stencil.
    """
    from didfuse import loss, net

    fp_ir = net.forward(ir, params, "train")
    params = net.with_running_stats(params, fp_ir)
    fp_vis = net.forward(vis, params, "train")
    total = loss.total_loss(ir, fp_ir.output, vis, fp_vis.output,
                            fp_ir.decomposition, fp_vis.decomposition, weights).total
    parts = []
    for fp in (fp_ir, fp_vis):
        for spec in net.LAYERS:
            if spec.activation.value == "prelu":
                parts.append(fp.tapes[spec.name].y.ravel() >= 0)
    out = fp_vis.output
    for axis in (-1, -2):
        gap = np.diff(vis, axis=axis) - np.diff(out, axis=axis)
        parts.append(gap.ravel() > 0)
        parts.append(gap.ravel() < 0)
    return total, np.packbits(np.concatenate(parts))


def entry_rel_error(a, n, floor=1e-6):
    """Scalar relative error; magnitudes below ``floor`` are compared absolutely."""
    return abs(a - n) / max(abs(a), abs(n), floor)


def e2e_gradient_check(params, ir, vis, weights, grads, samples_per_tensor=3, eps=EPS, seed=0):
    """Central differences on sampled parameter entries.

    Returns a dict with the norm-wise error over all samples at ``eps``, the
    worst entry error among kink-free stencils at ``eps``, the worst entry
    error when the step is shrunk until the stencil is kink-free, and the
    number of stencils that crossed a kink at ``eps``.
    """
    rng = np.random.default_rng(seed)
    analytic, numeric = [], []
    worst_clean = worst_adaptive = 0.0
    crossed = 0
    covered = set()
    for key, value in params.named_arrays(trainable_only=True):
        flat_grad = grads[key].reshape(-1)
        count = min(samples_per_tensor, value.size)
        for idx in rng.choice(value.size, size=count, replace=False):
            a = float(flat_grad[idx])
            step = eps
            while True:
                e = np.zeros(value.size)
                e[idx] = step
                up, down = params.copy(), params.copy()
                up.set(key, value + e.reshape(value.shape))
                down.set(key, value - e.reshape(value.shape))
                f_up, s_up = e2e_loss_and_signature(up, ir, vis, weights)
                f_down, s_down = e2e_loss_and_signature(down, ir, vis, weights)
                n = (f_up - f_down) / (2 * step)
                clean = np.array_equal(s_up, s_down)
                if step == eps:
                    analytic.append(a)
                    numeric.append(n)
                    if clean:
                        worst_clean = max(worst_clean, entry_rel_error(a, n))
                        covered.add(key)
                    else:
                        crossed += 1
                if clean or step < 1e-8:
                    worst_adaptive = max(worst_adaptive, entry_rel_error(a, n))
                    break
                step /= 10
    return {
        "normwise": rel_error(analytic, numeric),
        "worst_kink_free": worst_clean,
        "worst_adaptive": worst_adaptive,
        "crossed": crossed,
        "samples": len(analytic),
    }


def smooth_side_pair(rng, shape, margin=5 * EPS):
    """Random ``(v, v_hat)`` whose difference gaps all stay ``margin`` away from 0.

    Keeps central-difference stencils of the |.| gradient term off its kink.
    """
    while True:
        v, v_hat = rng.uniform(0, 1, shape), rng.uniform(0, 1, shape)
        gaps = [np.diff(v, axis=a) - np.diff(v_hat, axis=a) for a in (-1, -2)]
        if min(np.abs(g).min() for g in gaps) > margin:
            return v, v_hat


# -- VIF reference -----------------------------------------------------------


def vif_oracle(ref, dist, sigma_n2=2.0, eps=1e-10):
    """Pixel-domain VIF written out directly with full 2-D kernels.

    Boundary: half-sample symmetric extension; the blurred image keeps its
    size and scales 2..4 take every other pixel of the blurred image.
    """
    from numpy.lib.stride_tricks import sliding_window_view

    def blur(img, kernel):
        r = kernel.shape[0] // 2
        padded = np.pad(img, r, mode="symmetric")
        windows = sliding_window_view(padded, kernel.shape)
        return np.einsum("ijkl,kl->ij", windows, kernel)

    ref = np.asarray(ref, np.float64)
    dist = np.asarray(dist, np.float64)
    num = den = 0.0
    for scale in range(1, 5):
        n = 2 ** (5 - scale)  # half width
        sd = n / 5.0
        ax = np.arange(-n, n + 1)
        kernel = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sd * sd))
        kernel /= kernel.sum()
        if scale > 1:
            ref = blur(ref, kernel)[::2, ::2]
            dist = blur(dist, kernel)[::2, ::2]
        mu1, mu2 = blur(ref, kernel), blur(dist, kernel)
        var1 = blur(ref * ref, kernel) - mu1 ** 2
        var2 = blur(dist * dist, kernel) - mu2 ** 2
        cov = blur(ref * dist, kernel) - mu1 * mu2
        var1 = np.where(var1 < 0, 0.0, var1)
        var2 = np.where(var2 < 0, 0.0, var2)
        gain = cov / (var1 + eps)
        noise = var2 - gain * cov
        for y, x in zip(*np.nonzero(var1 < eps)):
            gain[y, x], noise[y, x], var1[y, x] = 0.0, var2[y, x], 0.0
        for y, x in zip(*np.nonzero(var2 < eps)):
            gain[y, x], noise[y, x] = 0.0, 0.0
        for y, x in zip(*np.nonzero(gain < 0)):
            noise[y, x], gain[y, x] = var2[y, x], 0.0
        noise = np.where(noise <= eps, eps, noise)
        num += np.sum(np.log10(1.0 + gain ** 2 * var1 / (noise + sigma_n2)))
        den += np.sum(np.log10(1.0 + var1 / sigma_n2))
    return 1.0 if den == 0 else num / den


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE_RESULTS = {}


def report_criterion(number, title, ok, detail):
    line = f"criterion {number:>2} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return ok
