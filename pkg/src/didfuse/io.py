"""Image codecs, preprocessing and paired-dataset discovery."""

from __future__ import annotations

import io as _io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DecodeError, ShapeError
from .tensor import Mode

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".png")
LUMA = (0.299, 0.587, 0.114)
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def rgb_to_gray(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    gray = rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2]
    return np.clip(_round_half_away(gray), 0, 255).astype(np.uint8)


# -- PGM ---------------------------------------------------------------------

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _pgm_header(data, path):
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise DecodeError(path, "truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, *nums = tokens
    try:
        width, height, maxval = (int(t) for t in nums)
    except ValueError:
        raise DecodeError(path, "malformed PGM header") from None
    if width < 1 or height < 1:
        raise DecodeError(path, f"invalid PGM size {width}x{height}")
    if maxval != 255:
        raise DecodeError(path, f"unsupported PGM maxval {maxval} (only 255)")
    return magic, width, height, pos


def decode_pgm(data, path="<bytes>"):
    magic, width, height, pos = _pgm_header(data, path)
    count = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates header and raster
        raster = data[pos + 1:pos + 1 + count]
        if len(raster) != count:
            raise DecodeError(path, f"truncated PGM raster: {len(raster)} of {count} bytes")
        return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()
    if magic == b"P2":
        values = data[pos:].split()
        if len(values) < count:
            raise DecodeError(path, f"truncated PGM raster: {len(values)} of {count} values")
        try:
            arr = np.array([int(v) for v in values[:count]], dtype=np.int64)
        except ValueError:
            raise DecodeError(path, "non-numeric value in ASCII PGM") from None
        if arr.min() < 0 or arr.max() > 255:
            raise DecodeError(path, "ASCII PGM value outside 0..255")
        return arr.astype(np.uint8).reshape(height, width)
    raise DecodeError(path, f"unsupported PGM magic {magic!r}")


def encode_pgm(img):
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ShapeError("PGM output needs a 2-D uint8 image", img.shape)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


# -- PNG (via Pillow) --------------------------------------------------------


def decode_png(data, path="<bytes>"):
    from PIL import Image

    try:
        with Image.open(_io.BytesIO(data)) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except Exception as exc:  # Pillow raises a zoo of types for bad files
        raise DecodeError(path, f"cannot decode PNG: {exc}") from None
    if mode == "L":
        return arr.astype(np.uint8)
    if mode == "RGB":
        return rgb_to_gray(arr)
    raise DecodeError(path, f"unsupported PNG mode {mode} (need 8-bit gray or RGB)")


def encode_png(img):
    from PIL import Image

    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ShapeError("PNG output needs a 2-D uint8 image", img.shape)
    buf = _io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="PNG")
    return buf.getvalue()


# -- files -------------------------------------------------------------------


def load_image(path):
    """Read a PGM (P5/P2) or 8-bit PNG file as a 2-D uint8 grayscale array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DecodeError(path, f"cannot read file: {exc.strerror}") from None
    if data.startswith(_PNG_MAGIC):
        return decode_png(data, path)
    if data[:2] in (b"P5", b"P2"):
        return decode_pgm(data, path)
    raise DecodeError(path, "unrecognized image format (expected PGM P5/P2 or PNG)")


def save_image(path, img):
    """Write a uint8 image; the suffix (.pgm or .png) picks the codec."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        path.write_bytes(encode_pgm(img))
    elif suffix == ".png":
        path.write_bytes(encode_png(img))
    else:
        raise DataError(f"{path}: output must end in .pgm or .png")


def to_uint8(x):
    """Map a [0, 1] image (2-D or (1, 1, h, w)) to uint8."""
    x = np.asarray(x, dtype=np.float64)
    while x.ndim > 2:
        x = x[0]
    return np.clip(_round_half_away(x * 255.0), 0, 255).astype(np.uint8)


# -- preprocessing -----------------------------------------------------------


def center_crop_offset(shape, crop):
    return (shape[0] - crop[0]) // 2, (shape[1] - crop[1]) // 2


def preprocess(img, mode=Mode.EVAL, crop=(128, 128)):
    """Turn a uint8 image into a (1, 1, h, w) float32 tensor in [0, 1].

    Train mode center-crops to ``crop``; eval mode only trims odd sizes down
    to the nearest even size.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ShapeError("expected a 2-D grayscale image", img.shape)
    if Mode(mode) is Mode.TRAIN:
        if img.shape[0] < crop[0] or img.shape[1] < crop[1]:
            raise ShapeError(f"image smaller than the {crop[0]}x{crop[1]} training crop", img.shape)
        y, x = center_crop_offset(img.shape, crop)
        img = img[y:y + crop[0], x:x + crop[1]]
    else:
        img = img[: img.shape[0] // 2 * 2, : img.shape[1] // 2 * 2]
    return (img.astype(np.float32) / np.float32(255.0))[None, None]


# -- datasets ----------------------------------------------------------------


@dataclass
class PairedDataset:
    """Aligned pairs found as identically named files in ``ir/`` and ``vis/``."""

    pairs: list[tuple[Path, Path]]
    split: str = ""
    unmatched: list[str] = field(default_factory=list)

    @classmethod
    def from_directory(cls, root, split=""):
        root = Path(root)
        ir_dir, vis_dir = root / "ir", root / "vis"
        if not ir_dir.is_dir() or not vis_dir.is_dir():
            raise DataError(f"{root}: expected ir/ and vis/ subdirectories")

        def names(d):
            return {p.name for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}

        ir_names, vis_names = names(ir_dir), names(vis_dir)
        unmatched = sorted(ir_names ^ vis_names)
        for name in unmatched:
            log.warning("%s: no counterpart for %s", root, name)
        common = sorted(ir_names & vis_names)
        if not common:
            raise DataError(f"{root}: no image pairs found")
        return cls([(ir_dir / n, vis_dir / n) for n in common], split or root.name, unmatched)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        ir_path, vis_path = self.pairs[i]
        ir, vis = load_image(ir_path), load_image(vis_path)
        if ir.shape != vis.shape:
            raise ShapeError(f"pair {ir_path.name} is misaligned", ir.shape, vis.shape)
        return ir, vis

    def name(self, i):
        return self.pairs[i][0].name

    def iter_named(self):
        """Yield ``(name, ir, vis)``, or the ``DataError`` for a bad pair."""
        for i in range(len(self)):
            try:
                ir, vis = self[i]
            except DataError as exc:
                yield exc
                continue
            yield self.name(i), ir, vis
