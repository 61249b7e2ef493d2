"""Synthetic 3-class sensor scenes (bicycle / car / person stand-ins).

A scene is built in the linear domain as reflectance x illumination:
a textured, cluttered background with one shape drawn at random pose,
an optional piecewise-constant illumination field (2-4 plateaus split by
random straight lines), a global illumination factor, additive Gaussian
noise, and the 16-bit sensor clamp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensor_io import CLASS_NAMES, MAX_VALUE, LabeledDataset

SUPERSAMPLE = 2


@dataclass(frozen=True)
class SceneParams:
    size: int = 96
    full_scale: float = 16384.0        # DN for reflectance 1 at illumination 1
    noise_std: float = 12.0
    piecewise_prob: float = 0.6
    plateau_range: tuple[float, float] = (0.25, 1.0)
    contrast_range: tuple[float, float] = (1.6, 3.0)
    clutter: int = 4


def _grid(size: int):
    n = size * SUPERSAMPLE
    c = (np.arange(n) + 0.5) / n
    return np.meshgrid(c, c, indexing="ij")      # (yy, xx) in [0, 1)


def _disk(yy, xx, cy, cx, r):
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _ring(yy, xx, cy, cx, r, t):
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return (d2 <= r * r) & (d2 >= (r - t) ** 2)


def _box(yy, xx, cy, cx, h, w):
    return (np.abs(yy - cy) <= h / 2) & (np.abs(xx - cx) <= w / 2)


def _segment(yy, xx, p, q, t):
    (y0, x0), (y1, x1) = p, q
    dy, dx = y1 - y0, x1 - x0
    u = np.clip(((yy - y0) * dy + (xx - x0) * dx) / (dy * dy + dx * dx), 0, 1)
    return (yy - (y0 + u * dy)) ** 2 + (xx - (x0 + u * dx)) ** 2 <= (t / 2) ** 2


def _shape_parts(class_id, yy, xx):
    """(mask, relative reflectance) parts in object-centred coordinates."""
    if class_id == 0:      # two wheel outlines joined by a frame
        wheel_r, t = 0.13, 0.035
        left, right, top = (0.06, -0.18), (0.06, 0.18), (-0.12, 0.0)
        frame = (_segment(yy, xx, left, top, t) | _segment(yy, xx, right, top, t)
                 | _segment(yy, xx, left, right, t)
                 | _segment(yy, xx, top, (-0.2, 0.04), t))
        wheels = _ring(yy, xx, *left, wheel_r, t) | _ring(yy, xx, *right, wheel_r, t)
        return [(wheels | frame, 1.0)]
    if class_id == 1:      # boxy body, cabin, two dark wheels
        body = _box(yy, xx, 0.0, 0.0, 0.16, 0.56) | _box(yy, xx, -0.12, -0.02, 0.12, 0.3)
        wheels = _disk(yy, xx, 0.09, -0.17, 0.07) | _disk(yy, xx, 0.09, 0.17, 0.07)
        return [(body, 1.0), (wheels, 0.45)]
    if class_id == 2:      # tall blob: head, torso, legs
        head = _disk(yy, xx, -0.26, 0.0, 0.06)
        torso = ((yy + 0.02) / 0.19) ** 2 + (xx / 0.085) ** 2 <= 1.0
        legs = (_segment(yy, xx, (0.12, -0.035), (0.34, -0.05), 0.045)
                | _segment(yy, xx, (0.12, 0.035), (0.34, 0.05), 0.045))
        return [(head | torso | legs, 1.0)]
    raise ValueError(f"class_id must be 0, 1 or 2, got {class_id}")


def _smooth_texture(rng, yy, xx, amplitude):
    tex = np.zeros_like(yy)
    for _ in range(3):
        fy, fx = rng.uniform(-6, 6, size=2)
        tex += np.cos(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    return 1.0 + amplitude * tex / 3.0


def _illumination_field(rng, yy, xx, params: SceneParams):
    field = np.ones_like(yy)
    if rng.random() >= params.piecewise_prob:
        return field
    n_cuts = rng.integers(1, 3)                 # 2..4 plateaus
    lo, hi = np.log(params.plateau_range)
    region = np.zeros(yy.shape, dtype=np.int64)
    for k in range(n_cuts):
        theta = rng.uniform(0, np.pi)
        py, px = rng.uniform(0.25, 0.75, size=2)
        side = (yy - py) * np.cos(theta) - (xx - px) * np.sin(theta) > 0
        region += side.astype(np.int64) << k
    levels = np.exp(rng.uniform(lo, hi, size=1 << n_cuts))
    levels[rng.integers(len(levels))] = 1.0
    return levels[region]


def render_reflectance(class_id: int, rng, params: SceneParams = SceneParams()) -> np.ndarray:
    """Supersampled reflectance map of a random scene of ``class_id``."""
    yy, xx = _grid(params.size)
    refl = rng.uniform(0.2, 0.45) * _smooth_texture(rng, yy, xx, 0.15)
    for _ in range(rng.integers(0, params.clutter + 1)):
        kind = rng.random()
        cy, cx = rng.uniform(0, 1, size=2)
        if kind < 0.5:
            m = _box(yy, xx, cy, cx, *rng.uniform(0.05, 0.35, size=2))
        else:
            m = _segment(yy, xx, (cy, cx), tuple(rng.uniform(0, 1, size=2)), rng.uniform(0.01, 0.03))
        refl = np.where(m, refl * rng.uniform(0.7, 1.4), refl)
    # random pose: scale, small rotation, flip, translation
    scale = rng.uniform(0.8, 1.15)
    angle = rng.uniform(-0.2, 0.2)
    flip = 1.0 if rng.random() < 0.5 else -1.0
    cy, cx = 0.5 + rng.uniform(-0.1, 0.1, size=2)
    dy, dx = yy - cy, xx - cx
    oy = (np.cos(angle) * dy + np.sin(angle) * dx) / scale
    ox = flip * (-np.sin(angle) * dy + np.cos(angle) * dx) / scale
    lo, hi = np.log(params.contrast_range)
    contrast = np.exp(rng.uniform(lo, hi))
    if rng.random() < 0.5:
        contrast = 1.0 / contrast
    base = refl.mean()
    for mask, rel in _shape_parts(class_id, oy, ox):
        part = base * contrast * rel * _smooth_texture(rng, yy, xx, 0.05)
        refl = np.where(mask, part, refl)
    return np.clip(refl, 0.005, 1.0)


def _downsample(a: np.ndarray) -> np.ndarray:
    s = SUPERSAMPLE
    return a.reshape(a.shape[0] // s, s, a.shape[1] // s, s).mean(axis=(1, 3))


def synth_scene(class_id: int, illum: float = 1.0, noise_std: float | None = None,
                seed: int = 0, params: SceneParams = SceneParams()):
    """Render one labelled scene; returns (GrayImage, label).

    Everything except noise is drawn from ``seed``; the whole linear scene
    is multiplied by ``illum`` before noise and clamping, so with zero
    noise and no clipping, scenes at two illuminations differ only by the
    factor (up to rounding).
    """
    if not illum > 0:
        raise ValueError("illumination factor must be positive")
    noise_std = params.noise_std if noise_std is None else noise_std
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    refl = render_reflectance(class_id, rng, params)
    yy, xx = _grid(params.size)
    field = _illumination_field(rng, yy, xx, params)
    linear = _downsample(refl * field) * params.full_scale * illum
    noise_rng = np.random.default_rng([seed, 1])
    if noise_std > 0:
        linear = linear + noise_rng.normal(0.0, noise_std, size=linear.shape)
    img = np.clip(np.rint(linear), 0, MAX_VALUE).astype(np.uint16)
    return img, class_id


def item_seed(master_seed: int, index: int) -> int:
    """Per-item seed derived from (master seed, index)."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, np.uint64)[0])


def synth_dataset(n: int, seed: int = 0, illum_range: tuple[float, float] = (0.7, 1.4),
                  noise_std: float | None = None, params: SceneParams = SceneParams()) -> LabeledDataset:
    """Balanced dataset of ``n`` scenes with log-uniform global illumination."""
    images, labels, names = [], [], []
    lo, hi = np.log(illum_range)
    for i in range(n):
        s = item_seed(seed, i)
        illum = float(np.exp(np.random.default_rng([s, 2]).uniform(lo, hi)))
        img, label = synth_scene(i % 3, illum, noise_std, s, params)
        images.append(img)
        labels.append(label)
        names.append(f"{CLASS_NAMES[label]}/{i:05d}.pgm")
    return LabeledDataset(np.stack(images), np.array(labels), CLASS_NAMES, names)
