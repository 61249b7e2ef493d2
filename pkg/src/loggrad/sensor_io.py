"""Sensor-domain image handling: PGM I/O, Bayer quads, brightness, datasets.

A ``GrayImage`` throughout the package is a 2-D ``numpy.uint16`` array of
linear sensor intensities in [0, 65535].
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_VALUE = 65535
CLASS_NAMES = ("bicycle", "car", "person")
BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")


class PGMError(ValueError):
    """Raised for malformed or unsupported PGM files."""


class DatasetError(ValueError):
    pass


def as_gray(pixels) -> np.ndarray:
    """Validate and convert to a GrayImage (2-D uint16)."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"gray image must be 2-D, got shape {arr.shape}")
    if arr.dtype != np.uint16:
        if arr.size and (arr.min() < 0 or arr.max() > MAX_VALUE):
            raise ValueError("pixel values outside [0, 65535]")
        if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.round(arr)):
            raise ValueError("gray image pixels must be integers")
        arr = arr.astype(np.uint16)
    return arr


# --------------------------------------------------------------------------
# PGM (P5)
# --------------------------------------------------------------------------

def _read_header_tokens(data: bytes) -> tuple[list[bytes], int]:
    """Return the four header tokens and the offset of the raster."""
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise PGMError("truncated header")
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not data[pos:pos + 1].isspace():
        raise PGMError("missing whitespace after maxval")
    return tokens, pos + 1


def load_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) file into a 16-bit GrayImage.

    8-bit files are expanded to the 16-bit range by multiplying by 257.
    """
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise PGMError(f"unsupported format {data[:2]!r}; only binary P5 is supported")
    tokens, offset = _read_header_tokens(data)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise PGMError(f"malformed header: {tokens!r}") from exc
    if width <= 0 or height <= 0:
        raise PGMError(f"bad dimensions {width}x{height}")
    if maxval == 255:
        dtype, scale = np.dtype("u1"), 257
    elif maxval == 65535:
        dtype, scale = np.dtype(">u2"), 1
    else:
        raise PGMError(f"unsupported maxval {maxval}")
    expected = width * height * dtype.itemsize
    raster = data[offset:offset + expected]
    if len(raster) < expected:
        raise PGMError(f"truncated payload: expected {expected} bytes, got {len(raster)}")
    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return pixels.astype(np.uint16) * np.uint16(scale)


def save_pgm(img, path, bit_depth: int = 16) -> None:
    """Write a GrayImage as binary PGM; 8-bit output stores round(P / 257)."""
    img = as_gray(img)
    if bit_depth == 16:
        maxval, raster = 65535, img.astype(">u2").tobytes()
    elif bit_depth == 8:
        raster = np.floor(img / 257.0 + 0.5).astype(np.uint8).tobytes()
        maxval = 255
    else:
        raise ValueError("bit_depth must be 8 or 16")
    header = b"P5\n%d %d\n%d\n" % (img.shape[1], img.shape[0], maxval)
    _atomic_write(Path(path), header + raster)


def save_pgm8(values, path) -> None:
    """Write an array of 0..255 codes directly as an 8-bit PGM."""
    arr = np.asarray(values)
    if arr.ndim != 2 or arr.min() < 0 or arr.max() > 255:
        raise ValueError("expected 2-D array of values in [0, 255]")
    save_pgm(arr.astype(np.uint16) * 257, path, bit_depth=8)


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# Bayer and brightness
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BayerRaw:
    pixels: np.ndarray
    pattern: str = "RGGB"

    def __post_init__(self):
        px = as_gray(self.pixels)
        if px.shape[0] % 2 or px.shape[1] % 2:
            raise ValueError(f"Bayer mosaic dimensions must be even, got {px.shape}")
        if self.pattern not in BAYER_PATTERNS:
            raise ValueError(f"unknown Bayer pattern {self.pattern!r}")
        object.__setattr__(self, "pixels", px)


def demosaic_to_gray(raw: BayerRaw) -> np.ndarray:
    """Average each 2x2 quad (half resolution), rounding halves up.

    The quad always holds one R, one B and two G samples whatever the
    pattern, so the pattern does not change the result.
    """
    px = raw.pixels.astype(np.uint32)
    quad_sum = px[0::2, 0::2] + px[0::2, 1::2] + px[1::2, 0::2] + px[1::2, 1::2]
    return ((quad_sum + 2) // 4).astype(np.uint16)


def scale_brightness(img, b: float) -> np.ndarray:
    """Scale linear intensities by ``b`` with rounding and sensor clamp."""
    if not b > 0:
        raise ValueError(f"brightness factor must be positive, got {b}")
    scaled = np.rint(np.asarray(img, dtype=np.float64) * b)
    return np.clip(scaled, 0, MAX_VALUE).astype(np.uint16)


def resize_bilinear(img, size: int | tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping."""
    src = np.asarray(img, dtype=np.float64)
    out_h, out_w = (size, size) if isinstance(size, int) else size
    in_h, in_w = src.shape

    def coords(n_out, n_in):
        c = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        c = np.clip(c, 0, n_in - 1)
        lo = np.floor(c).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, c - lo

    y0, y1, fy = coords(out_h, in_h)
    x0, x1, fx = coords(out_w, in_w)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return np.clip(np.floor(out + 0.5), 0, MAX_VALUE).astype(np.uint16)


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------

@dataclass
class LabeledDataset:
    images: np.ndarray                     # (N, H, W) uint16
    labels: np.ndarray                     # (N,) int
    class_names: tuple[str, ...] = CLASS_NAMES
    paths: list[str] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or self.images.dtype != np.uint16:
            raise DatasetError("images must be an (N, H, W) uint16 array")
        if len(self.images) != len(self.labels):
            raise DatasetError("images and labels differ in length")
        if self.paths is not None and len(self.paths) != len(self.labels):
            raise DatasetError("paths and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        paths = None if self.paths is None else [self.paths[i] for i in idx]
        return LabeledDataset(self.images[idx], self.labels[idx], self.class_names, paths)

    def check_classes(self) -> None:
        missing = set(range(len(self.class_names))) - set(self.labels.tolist())
        if missing:
            raise DatasetError(f"no items for classes {sorted(missing)}")


@dataclass(frozen=True)
class SplitSpec:
    train: int = 70
    val: int = 15
    test: int = 15
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0:
            raise ValueError("split fractions must be positive")
        if self.train + self.val + self.test != 100:
            raise ValueError("split fractions must sum to 100")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded permutation, then floor(val) and floor(test) sizes; rest is train.

    Uses numpy's PCG64 generator (``default_rng(seed).permutation``).
    """
    n_val = n * spec.val // 100
    n_test = n * spec.test // 100
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) == 0:
        raise DatasetError(f"split {spec} of {n} items yields an empty subset")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split_dataset(ds: LabeledDataset, spec: SplitSpec):
    if len(ds) == 0:
        raise DatasetError("cannot split an empty dataset")
    return tuple(ds.subset(i) for i in split_indices(len(ds), spec))


def write_manifest(path, splits: dict[str, Sequence[str]], seed: int) -> None:
    payload = {"seed": seed, **{k: list(v) for k, v in splits.items()}}
    _atomic_write(Path(path), (json.dumps(payload, indent=1) + "\n").encode())


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def load_pascal_raw(root, size: int | None = 96,
                    class_names: Sequence[str] = CLASS_NAMES) -> LabeledDataset:
    """Load 16-bit PGM crops laid out as ``<root>/<class_name>/*.pgm``.

    Every image is bilinearly resized to ``size`` x ``size``; pass
    ``size=None`` to keep native dimensions (they must then agree).
    """
    root = Path(root)
    images, labels, paths = [], [], []
    for label, name in enumerate(class_names):
        cdir = root / name
        if not cdir.is_dir():
            raise DatasetError(f"missing class directory {cdir}")
        files = sorted(p for p in cdir.iterdir() if not p.name.startswith("."))
        if not files:
            raise DatasetError(f"class directory {cdir} is empty")
        for f in files:
            if f.suffix.lower() != ".pgm":
                raise DatasetError(f"non-PGM file in dataset: {f}")
            img = load_pgm(f)
            if size is not None:
                img = resize_bilinear(img, size)
            images.append(img)
            labels.append(label)
            paths.append(str(f))
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise DatasetError(f"images differ in size: {sorted(shapes)}")
    return LabeledDataset(np.stack(images), np.array(labels), tuple(class_names), paths)
