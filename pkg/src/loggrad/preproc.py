"""Input representations: log transform, log-gradient, coarse quantizers,
ratio-domain (RDC) emulation and the gamma-corrected 8-bit baseline.

Logarithms are natural logs; quantizer thresholds live in the same units.
The gradient filter is applied as a cross-correlation with the kernel as
written (no flip) and replicate-edge borders.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .sensor_io import MAX_VALUE

GRADIENT_KERNEL = np.array([[0, -1, 0],
                            [-1, 0, 1],
                            [0, 1, 0]], dtype=np.float64)


class InputFormat(str, enum.Enum):
    JPEG8 = "jpeg8"
    RAW16 = "raw16"
    LOGGRAD_FP = "loggrad_fp"
    LOGGRAD_1P5 = "loggrad_1p5"
    LOGGRAD_2P25 = "loggrad_2p25"

    @property
    def is_loggrad(self) -> bool:
        return self.value.startswith("loggrad")


@dataclass(frozen=True)
class QuantizerSpec:
    """Decision thresholds t_1 < ... < t_k and k+1 output codes."""

    thresholds: tuple[float, ...]
    codes: tuple[int, ...]

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        c = tuple(int(v) for v in self.codes)
        if len(c) != len(t) + 1:
            raise ValueError("need exactly one more code than thresholds")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError(f"thresholds must be strictly increasing: {t}")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError(f"codes must be strictly increasing: {c}")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "codes", c)

    @property
    def levels(self) -> int:
        return len(self.codes)

    @classmethod
    def three_level(cls, t: float = 0.10) -> "QuantizerSpec":
        return cls((-t, t), (-1, 0, 1))

    @classmethod
    def five_level(cls, inner: float = 0.10, outer: float = 0.35) -> "QuantizerSpec":
        return cls((-outer, -inner, inner, outer), (-2, -1, 0, 1, 2))


QUANT_1P5 = QuantizerSpec.three_level()
QUANT_2P25 = QuantizerSpec.five_level()


@dataclass(frozen=True)
class GammaSpec:
    gamma: float = 2.2

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


def log_transform(img, shift: float = 1.0) -> np.ndarray:
    """ln(P + shift) elementwise."""
    if shift < 0:
        raise ValueError("shift must be non-negative")
    p = np.asarray(img, dtype=np.float64)
    if shift == 0 and np.any(p <= 0):
        raise ValueError("log domain error: zero pixel with shift=0")
    return np.log(p + shift)


def log_gradient(logimg) -> np.ndarray:
    """Sum of horizontal and vertical central differences (replicate borders)."""
    v = np.asarray(logimg, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] < 3:
        raise ValueError(f"log-gradient needs an image of at least 3x3, got {v.shape}")
    p = np.pad(v, 1, mode="edge")
    return (p[1:-1, 2:] - p[1:-1, :-2]) + (p[2:, 1:-1] - p[:-2, 1:-1])


def quantize(values, spec: QuantizerSpec) -> np.ndarray:
    """Map each value to codes[i], i = number of thresholds <= value."""
    idx = np.searchsorted(np.asarray(spec.thresholds), values, side="right")
    return np.asarray(spec.codes, dtype=np.int64)[idx]


def rdc_quantize(a, b, spec: QuantizerSpec, shift: float = 1.0):
    """Quantize the ratio (a+shift)/(b+shift) against levels exp(t_i).

    Only multiplications and comparisons are used; no logarithm is taken
    at run time.  Accepts scalars or broadcastable arrays.
    """
    num = np.asarray(a, dtype=np.float64) + shift
    den = np.asarray(b, dtype=np.float64) + shift
    levels = np.exp(np.asarray(spec.thresholds))
    idx = np.zeros(np.broadcast(num, den).shape, dtype=np.int64)
    for level in levels:
        idx += num >= level * den
    out = np.asarray(spec.codes, dtype=np.int64)[idx]
    return out if out.ndim else int(out)


def rdc_gradient(img, spec: QuantizerSpec, shift: float = 1.0) -> np.ndarray:
    """Quantized log-gradient computed in the ratio domain.

    The gradient is ln of (P[y,x+1]+s)(P[y+1,x]+s) / ((P[y,x-1]+s)(P[y-1,x]+s)),
    so it reduces to one ratio comparison per level.  Products of 16-bit
    values are exact in float64.
    """
    p = np.pad(np.asarray(img, dtype=np.float64) + shift, 1, mode="edge")
    num = p[1:-1, 2:] * p[2:, 1:-1]
    den = p[1:-1, :-2] * p[:-2, 1:-1]
    return rdc_quantize(num, den, spec, shift=0.0)


def gamma_encode(img, spec: GammaSpec = GammaSpec()) -> np.ndarray:
    """round(255 * (P/65535)^(1/gamma)) as uint8."""
    p = np.asarray(img, dtype=np.float64) / MAX_VALUE
    out = np.floor(255.0 * np.power(p, 1.0 / spec.gamma) + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8)


def prepare_input(img, fmt: InputFormat | str, q3: QuantizerSpec = QUANT_1P5,
                  q5: QuantizerSpec = QUANT_2P25, gamma: GammaSpec = GammaSpec(),
                  shift: float = 1.0) -> np.ndarray:
    """Convert a GrayImage into an (H, W, 1) float64 network input."""
    fmt = InputFormat(fmt)
    if fmt is InputFormat.RAW16:
        out = np.asarray(img, dtype=np.float64) / MAX_VALUE
    elif fmt is InputFormat.JPEG8:
        out = gamma_encode(img, gamma) / 255.0
    else:
        grad = log_gradient(log_transform(img, shift))
        if fmt is InputFormat.LOGGRAD_FP:
            out = grad
        elif fmt is InputFormat.LOGGRAD_1P5:
            out = quantize(grad, q3).astype(np.float64)
        else:
            out = quantize(grad, q5).astype(np.float64)
    return out[:, :, None]


def prepare_batch(images, fmt, q3=QUANT_1P5, q5=QUANT_2P25, gamma=GammaSpec(),
                  shift: float = 1.0) -> np.ndarray:
    """Stack ``prepare_input`` over an (N, H, W) image array."""
    return np.stack([prepare_input(im, fmt, q3, q5, gamma, shift) for im in images])


def codes_to_gray8(codes) -> np.ndarray:
    """Inspection mapping code*64 + 128, clipped to 8 bits."""
    return np.clip(np.asarray(codes) * 64 + 128, 0, 255).astype(np.uint8)
