"""Fusion quality metrics: EN, MI, SD, SF, VIF and AG.

All metrics work in 8-bit intensity units. EN and MI histogram the
quantized image; SD, SF, AG and VIF use the float values on the [0, 255]
scale. Logarithms are base 2 except inside VIF, where the base cancels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DataError, ShapeError

log = logging.getLogger(__name__)

METRICS = ("en", "mi", "sd", "sf", "vif", "ag")
VIF_MIN_SIZE = 32
VIF_SCALES = 4
VIF_NOISE_VAR = 2.0
_VIF_EPS = 1e-10


def quantize(img):
    """Round half away from zero and clip to uint8."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    img = np.asarray(img, dtype=np.float64)
    return np.clip(np.sign(img) * np.floor(np.abs(img) + 0.5), 0, 255).astype(np.uint8)


def _float(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("metrics take 2-D grayscale images", img.shape)
    return img


def _spatial(img):
    img = _float(img)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ShapeError("image must be at least 2x2", img.shape)
    return img


def _entropy_of(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def entropy(img):
    q = quantize(img)
    if q.size == 0:
        raise ShapeError("empty image", q.shape)
    hist = np.bincount(q.ravel(), minlength=256) / q.size
    return _entropy_of(hist)


def _pair_information(a, b):
    joint = np.bincount(a.ravel().astype(np.int64) * 256 + b.ravel(), minlength=256 * 256)
    joint = joint.reshape(256, 256) / a.size
    pa, pb = joint.sum(axis=1), joint.sum(axis=0)
    return _entropy_of(pa) + _entropy_of(pb) - _entropy_of(joint.ravel())


def mutual_information(src_a, src_b, fused):
    """``I(a; fused) + I(b; fused)`` from 256x256 joint histograms."""
    a, b, f = quantize(src_a), quantize(src_b), quantize(fused)
    if not a.shape == b.shape == f.shape:
        raise ShapeError("MI inputs differ in size", a.shape, b.shape, f.shape)
    return _pair_information(a, f) + _pair_information(b, f)


def standard_deviation(img):
    return float(np.std(_spatial(img)))


def spatial_frequency(img):
    img = _spatial(img)
    rf = np.mean((img[:, 1:] - img[:, :-1]) ** 2)
    cf = np.mean((img[1:, :] - img[:-1, :]) ** 2)
    return float(np.sqrt(rf + cf))


def average_gradient(img):
    img = _spatial(img)
    dx = img[:-1, 1:] - img[:-1, :-1]
    dy = img[1:, :-1] - img[:-1, :-1]
    return float(np.mean(np.sqrt((dx ** 2 + dy ** 2) / 2)))


# -- VIF ---------------------------------------------------------------------


def vif_window(scale):
    """1-D Gaussian taps for scale 1..4: size 2*2^(5-k)+1, sigma 2^(5-k)/5."""
    half = 2 ** (VIF_SCALES - scale + 1)
    x = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-(x ** 2) / (2 * (half / 5) ** 2))
    return w / w.sum()


def _blur(img, win):
    # symmetric boundary, output keeps the input size
    return correlate1d(correlate1d(img, win, axis=0, mode="reflect"), win, axis=1, mode="reflect")


def vif(ref, dist):
    """Pixel-domain multi-scale visual information fidelity of ``dist`` w.r.t. ``ref``."""
    ref, dist = _float(ref), _float(dist)
    if ref.shape != dist.shape:
        raise ShapeError("VIF inputs differ in size", ref.shape, dist.shape)
    if min(ref.shape) < VIF_MIN_SIZE:
        raise ShapeError(f"VIF needs images of at least {VIF_MIN_SIZE}x{VIF_MIN_SIZE}", ref.shape)
    num = den = 0.0
    for scale in range(1, VIF_SCALES + 1):
        win = vif_window(scale)
        if scale > 1:
            ref = _blur(ref, win)[::2, ::2]
            dist = _blur(dist, win)[::2, ::2]
        mu1, mu2 = _blur(ref, win), _blur(dist, win)
        s1 = np.maximum(_blur(ref * ref, win) - mu1 * mu1, 0)
        s2 = np.maximum(_blur(dist * dist, win) - mu2 * mu2, 0)
        s12 = _blur(ref * dist, win) - mu1 * mu2

        g = s12 / (s1 + _VIF_EPS)
        sv = s2 - g * s12
        flat_ref = s1 < _VIF_EPS
        g[flat_ref] = 0
        sv[flat_ref] = s2[flat_ref]
        s1[flat_ref] = 0
        flat_dist = s2 < _VIF_EPS
        g[flat_dist] = 0
        sv[flat_dist] = 0
        neg = g < 0
        sv[neg] = s2[neg]
        g[neg] = 0
        sv = np.maximum(sv, _VIF_EPS)

        num += np.sum(np.log10(1 + g * g * s1 / (sv + VIF_NOISE_VAR)))
        den += np.sum(np.log10(1 + s1 / VIF_NOISE_VAR))
    if den == 0:
        # a flat reference carries no information to lose
        return 1.0
    return float(num / den)


def vif_fusion(ir, vis, fused):
    """Mean of VIF with each source as the reference."""
    return 0.5 * (vif(ir, fused) + vif(vis, fused))


# -- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    en: float
    mi: float
    sd: float
    sf: float
    vif: float
    ag: float
    name: str = ""

    def values(self):
        return [getattr(self, m) for m in METRICS]


def evaluate(ir, vis, fused, name=""):
    """Score one fused image (all three on the [0, 255] scale)."""
    ir, vis, fused = (np.asarray(x, dtype=np.float64) for x in (ir, vis, fused))
    if not ir.shape == vis.shape == fused.shape:
        raise ShapeError("ir, vis and fused images differ in size", ir.shape, vis.shape, fused.shape)
    return MetricsReport(
        en=entropy(fused),
        mi=mutual_information(ir, vis, fused),
        sd=standard_deviation(fused),
        sf=spatial_frequency(fused),
        vif=vif_fusion(ir, vis, fused),
        ag=average_gradient(fused),
        name=name,
    )


@dataclass
class ScoreSummary:
    """Per-image reports for one method plus the mean and population std per metric."""

    method: str
    reports: list[MetricsReport]
    skipped: int = 0

    def mean(self):
        return dict(zip(METRICS, np.mean([r.values() for r in self.reports], axis=0)))

    def std(self):
        return dict(zip(METRICS, np.std([r.values() for r in self.reports], axis=0)))


def score_pairs(pairs, fuse, method="fused"):
    """Score ``fuse(ir, vis) -> fused`` over ``(name, ir, vis)`` triples.

    ``pairs`` yields ``(name, ir, vis)`` or raises ``DataError`` for a pair it
    cannot produce; such pairs are skipped with a warning.
    """
    reports, skipped = [], 0
    for item in pairs:
        if isinstance(item, DataError):
            log.warning("skipping pair: %s", item)
            skipped += 1
            continue
        name, ir, vis = item
        try:
            fused = fuse(ir, vis)
            reports.append(evaluate(ir, vis, fused, name))
        except DataError as exc:
            log.warning("skipping %s: %s", name, exc)
            skipped += 1
    if not reports:
        raise DataError(f"no pairs could be scored for {method} ({skipped} skipped)")
    return ScoreSummary(method, reports, skipped)


def score_directory(root, fuse, method="fused"):
    """Score every aligned pair under ``root/ir`` and ``root/vis``.

    ``fuse`` maps two uint8 arrays to a fused image on the [0, 255] scale.
    """
    from .io import PairedDataset

    return score_pairs(PairedDataset.from_directory(root).iter_named(), fuse, method)


def format_table(summaries, delimiter="\t"):
    header = ["method"] + [m.upper() for m in METRICS]
    lines = [delimiter.join(header)]
    for s in summaries:
        mean, std = s.mean(), s.std()
        lines.append(delimiter.join([s.method] + [f"{mean[m]:.3f}±{std[m]:.3f}" for m in METRICS]))
    return "\n".join(lines) + "\n"


def format_per_image(summaries, delimiter="\t"):
    lines = [delimiter.join(["method", "image"] + [m.upper() for m in METRICS])]
    for s in summaries:
        for r in s.reports:
            lines.append(delimiter.join([s.method, r.name] + [repr(float(v)) for v in r.values()]))
    return "\n".join(lines) + "\n"


def write_report(path, summaries):
    """Write the mean±std table to ``path`` and per-image rows next to it."""
    path = Path(path)
    path.write_text(format_table(summaries), encoding="utf-8")
    raw = path.with_name(path.stem + ".per_image.tsv")
    raw.write_text(format_per_image(summaries), encoding="utf-8")
    return raw

