"""Filter cosine similarity, similarity histograms, and similar-pair export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sensor_io import save_pgm8

DEFAULT_THRESHOLD = 0.98
SIM_BINS = 50


@dataclass(frozen=True)
class NormalizedFilter:
    layer: int
    index: int
    vector: np.ndarray      # unit L2 norm, flattened kh*kw*cin


def _conv_weight(params, layer: int) -> np.ndarray:
    key = f"conv{layer}.w"
    if key not in params:
        raise KeyError(f"no convolutional layer {layer} in parameters")
    w = np.asarray(params[key], dtype=np.float64)
    if w.ndim != 4:
        raise ValueError(f"{key} must be kh x kw x cin x cout, got shape {w.shape}")
    return w


def normalize_filters(params, layer: int) -> list[NormalizedFilter]:
    """Flatten each output filter of conv ``layer`` and scale it to unit norm.

    Biases are ignored.
    """
    w = _conv_weight(params, layer)
    flat = w.reshape(-1, w.shape[-1]).T
    out = []
    for i, v in enumerate(flat):
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError(f"filter {i} of conv layer {layer} has zero norm")
        out.append(NormalizedFilter(layer, i, v / n))
    return out


def similarity_matrix(filters) -> np.ndarray:
    """Pairwise dot products of normalized filters (or raw vectors, normalized here)."""
    vecs = [f.vector if isinstance(f, NormalizedFilter) else np.asarray(f, np.float64)
            for f in filters]
    if len(vecs) < 2:
        raise ValueError("need at least two filters")
    if len({v.shape for v in vecs}) != 1:
        raise ValueError("filters have different lengths")
    m = np.stack([v.ravel() for v in vecs])
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError(f"filter {int(np.argmin(norms))} has zero norm")
    m = m / norms
    s = m @ m.T
    s = (s + s.T) / 2
    np.fill_diagonal(s, 1.0)
    return s


def histogram(values, bin_count: int = SIM_BINS, range: tuple[float, float] = (-1.0, 1.0)):
    """Uniform-bin histogram; the last bin includes its right edge."""
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("histogram of empty input")
    counts, edges = np.histogram(values, bins=bin_count, range=range)
    return edges, counts


def cumulative_abs_histogram(values, bin_count: int = SIM_BINS):
    """Running count of |values| over uniform bins on [0, 1]."""
    a = np.abs(np.asarray(values, dtype=np.float64))
    edges, counts = histogram(np.minimum(a, 1.0), bin_count, (0.0, 1.0))
    return edges, np.cumsum(counts)


def off_diagonal(s: np.ndarray) -> np.ndarray:
    """Upper-triangle entries (each unordered pair once)."""
    iu = np.triu_indices(s.shape[0], k=1)
    return s[iu]


def similar_pairs(s, threshold: float = DEFAULT_THRESHOLD) -> list[tuple[int, int, float]]:
    """Unordered pairs i<j with |s_ij| > threshold, strongest first."""
    if isinstance(s, SimilarityReport):
        s = s.matrix
    s = np.asarray(s)
    i, j = np.triu_indices(s.shape[0], k=1)
    vals = s[i, j]
    keep = np.abs(vals) > threshold
    pairs = [(int(a), int(b), float(v)) for a, b, v in zip(i[keep], j[keep], vals[keep])]
    # stable sort keeps (i, j) order among equal magnitudes
    pairs.sort(key=lambda p: -abs(p[2]))
    return pairs


@dataclass
class SimilarityReport:
    layer: int
    matrix: np.ndarray
    threshold: float = DEFAULT_THRESHOLD
    bins: int = SIM_BINS
    hist_edges: np.ndarray = field(default=None, repr=False)
    hist_counts: np.ndarray = field(default=None, repr=False)
    cum_edges: np.ndarray = field(default=None, repr=False)
    cum_counts: np.ndarray = field(default=None, repr=False)
    pairs: list = field(default_factory=list)

    @classmethod
    def from_params(cls, params, layer: int, threshold: float = DEFAULT_THRESHOLD,
                    bins: int = SIM_BINS) -> "SimilarityReport":
        return cls.from_matrix(similarity_matrix(normalize_filters(params, layer)),
                               layer, threshold, bins)

    @classmethod
    def from_matrix(cls, s, layer: int, threshold: float = DEFAULT_THRESHOLD,
                    bins: int = SIM_BINS) -> "SimilarityReport":
        s = np.asarray(s, dtype=np.float64)
        off = off_diagonal(s)
        he, hc = histogram(off, bins, (-1.0, 1.0))
        ce, cc = cumulative_abs_histogram(off, bins)
        return cls(layer, s, threshold, bins, he, hc, ce, cc, similar_pairs(s, threshold))

    def check(self) -> None:
        s = self.matrix
        if not np.array_equal(s, s.T):
            raise ValueError("similarity matrix is not symmetric")
        if np.max(np.abs(np.diag(s) - 1)) > 1e-9:
            raise ValueError("similarity diagonal differs from 1")
        if np.max(np.abs(s)) > 1 + 1e-9:
            raise ValueError("similarity exceeds 1 in magnitude")

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "threshold": self.threshold,
            "bins": self.bins,
            "matrix": self.matrix.tolist(),
            "histogram": {"edges": self.hist_edges.tolist(), "counts": self.hist_counts.tolist()},
            "cumulative_abs": {"edges": self.cum_edges.tolist(), "counts": self.cum_counts.tolist()},
            "pairs": [list(p) for p in self.pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityReport":
        return cls(
            layer=int(d["layer"]),
            matrix=np.asarray(d["matrix"], dtype=np.float64),
            threshold=float(d["threshold"]),
            bins=int(d["bins"]),
            hist_edges=np.asarray(d["histogram"]["edges"], dtype=np.float64),
            hist_counts=np.asarray(d["histogram"]["counts"], dtype=np.int64),
            cum_edges=np.asarray(d["cumulative_abs"]["edges"], dtype=np.float64),
            cum_counts=np.asarray(d["cumulative_abs"]["counts"], dtype=np.int64),
            pairs=[(int(i), int(j), float(v)) for i, j, v in d["pairs"]],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SimilarityReport":
        return cls.from_dict(json.loads(text))


def filter_to_gray8(filt: np.ndarray) -> np.ndarray:
    """Min-max map a kh x kw x cin filter to 0..255, channels tiled left to right.

    A constant filter maps to mid-gray 128.
    """
    filt = np.asarray(filt, dtype=np.float64)
    if filt.ndim == 2:
        filt = filt[:, :, None]
    tiled = np.concatenate([filt[:, :, c] for c in range(filt.shape[2])], axis=1)
    lo, hi = tiled.min(), tiled.max()
    if hi == lo:
        return np.full(tiled.shape, 128, dtype=np.uint8)
    return np.floor((tiled - lo) / (hi - lo) * 255 + 0.5).astype(np.uint8)


def export_filter_gallery(params, layer: int, pairs, directory) -> list[Path]:
    """Write both filters of every pair as ``L<layer>_F<idx>_pair<k>.pgm``."""
    w = _conv_weight(params, layer)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for k, (i, j, _) in enumerate(pairs):
        for idx in (i, j):
            path = directory / f"L{layer}_F{idx}_pair{k}.pgm"
            save_pgm8(filter_to_gray8(w[..., idx]), path)
            written.append(path)
    return written
