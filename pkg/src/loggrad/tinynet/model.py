"""Sequential model description, initialization, and whole-network passes."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L

LAYER_KINDS = ("conv", "relu", "maxpool", "flatten", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 0
    out: int = 0
    padding: str = "same-zero"
    pool: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and (self.kernel < 1 or self.out < 1):
            raise ValueError("conv layers need kernel >= 1 and out >= 1")
        if self.kind == "conv" and self.padding not in L.PADDINGS:
            raise ValueError(f"unknown padding {self.padding!r}")
        if self.kind == "dense" and self.out < 1:
            raise ValueError("dense layers need out >= 1")
        if self.kind == "maxpool" and self.pool < 1:
            raise ValueError("pool factor must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    task: str = "classify"             # or "reconstruct"
    meta: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"name": self.name, "input_shape": list(self.input_shape),
                "task": self.task, "meta": dict(self.meta),
                "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["name"], tuple(d["input_shape"]),
                   tuple(LayerSpec(**l) for l in d["layers"]),
                   d.get("task", "classify"), d.get("meta", {}))

    def shapes(self) -> list[tuple[int, ...]]:
        """Activation shape (without batch) after each layer."""
        shape = tuple(self.input_shape)
        out = []
        for layer in self.layers:
            if layer.kind == "conv":
                h, w, _ = shape
                if layer.padding == "valid":
                    h, w = h - layer.kernel + 1, w - layer.kernel + 1
                shape = (h, w, layer.out)
            elif layer.kind == "maxpool":
                shape = (shape[0] // layer.pool, shape[1] // layer.pool, shape[2])
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif layer.kind == "dense":
                shape = (layer.out,)
            if min(shape) < 1:
                raise ValueError(f"model {self.name} collapses to shape {shape}")
            out.append(shape)
        return out

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        prev = tuple(self.input_shape)
        n_conv = n_dense = 0
        for layer, shape in zip(self.layers, self.shapes()):
            if layer.kind == "conv":
                shapes[f"conv{n_conv}.w"] = (layer.kernel, layer.kernel, prev[-1], layer.out)
                shapes[f"conv{n_conv}.b"] = (layer.out,)
                n_conv += 1
            elif layer.kind == "dense":
                shapes[f"dense{n_dense}.w"] = (prev[0], layer.out)
                shapes[f"dense{n_dense}.b"] = (layer.out,)
                n_dense += 1
            prev = shape
        return shapes


def classifier_spec(c1: int, c2: int, kernel: int = 5, pool: int = 4,
                    input_size: int = 96, n_classes: int = 3,
                    padding: str = "same-zero") -> ModelSpec:
    """2conv1fc: conv-relu-pool, conv-relu-pool, flatten, dense."""
    if c1 < 1 or c2 < 1:
        raise ValueError("channel counts must be >= 1")
    return ModelSpec(
        name="2conv1fc",
        input_shape=(input_size, input_size, 1),
        layers=(
            LayerSpec("conv", kernel=kernel, out=c1, padding=padding),
            LayerSpec("relu"),
            LayerSpec("maxpool", pool=pool),
            LayerSpec("conv", kernel=kernel, out=c2, padding=padding),
            LayerSpec("relu"),
            LayerSpec("maxpool", pool=pool),
            LayerSpec("flatten"),
            LayerSpec("dense", out=n_classes),
        ),
    )


def reconstruction_spec(channels: int = 10, kernel: int = 16, input_size: int = 96,
                        padding: str = "same-zero") -> ModelSpec:
    """2conv: conv-relu-conv with same-size output."""
    return ModelSpec(
        name="2conv",
        input_shape=(input_size, input_size, 1),
        layers=(
            LayerSpec("conv", kernel=kernel, out=channels, padding=padding),
            LayerSpec("relu"),
            LayerSpec("conv", kernel=kernel, out=1, padding=padding),
        ),
        task="reconstruct",
    )


INIT_SCHEMES = ("he_normal", "glorot_uniform")


def init_params(spec: ModelSpec, seed: int, scheme: str = "he_normal") -> dict[str, np.ndarray]:
    """Initial weights with zero biases.

    ``he_normal`` draws N(0, 2 / fan_in). ``glorot_uniform`` draws U(-a, a)
    with a = sqrt(6 / (fan_in + fan_out)), where a conv kernel counts
    kh*kw*cin in and kh*kw*cout out.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        receptive = int(np.prod(shape[:-2]))
        fan_in, fan_out = receptive * shape[-2], receptive * shape[-1]
        if scheme == "glorot_uniform":
            a = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-a, a, shape)
        else:
            params[name] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return params


def forward(spec: ModelSpec, params, x):
    """Run the network; returns (output, caches) for ``backward``.

    A ReLU directly followed by max pooling is evaluated as pool-then-ReLU,
    which gives identical outputs and gradients on 1/p^2 of the data.
    """
    caches: list = [None] * len(spec.layers)
    n_conv = n_dense = 0
    layers = spec.layers
    i = 0
    while i < len(layers):
        layer = layers[i]
        if layer.kind == "conv":
            name = f"conv{n_conv}"
            x_in = x
            x, cols = L.conv2d_forward(x, params[name + ".w"], params[name + ".b"],
                                       layer.padding, keep_cols=True)
            caches[i] = (name, x_in, cols)
            n_conv += 1
        elif layer.kind == "relu" and i + 1 < len(layers) and layers[i + 1].kind == "maxpool":
            shape = x.shape
            pooled, idx = L.maxpool_forward(x, layers[i + 1].pool)
            caches[i] = ("fused", None)
            caches[i + 1] = (idx, shape, pooled)
            x = L.relu_forward(pooled)
            i += 1
        elif layer.kind == "relu":
            caches[i] = ("plain", x)
            x = L.relu_forward(x)
        elif layer.kind == "maxpool":
            shape = x.shape
            x, idx = L.maxpool_forward(x, layer.pool)
            caches[i] = (idx, shape, None)
        elif layer.kind == "flatten":
            caches[i] = x.shape
            x = L.flatten(x)
        else:
            name = f"dense{n_dense}"
            caches[i] = (name, x)
            x = L.dense_forward(x, params[name + ".w"], params[name + ".b"])
            n_dense += 1
        i += 1
    return x, caches


def backward(spec: ModelSpec, params, caches, grad_out) -> dict[str, np.ndarray]:
    grads = {}
    g = grad_out
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, cache = spec.layers[i], caches[i]
        if layer.kind == "conv":
            name, x, cols = cache
            g, gw, gb = L.conv2d_backward(x, params[name + ".w"], g, layer.padding,
                                          need_input_grad=i > 0, cols=cols)
            grads[name + ".w"], grads[name + ".b"] = gw, gb
        elif layer.kind == "relu":
            mode, x = cache
            if mode == "plain":
                g = L.relu_backward(x, g)
        elif layer.kind == "maxpool":
            idx, shape, pooled = cache
            if pooled is not None:
                g = L.relu_backward(pooled, g)
            g = L.maxpool_backward(g, idx, shape, layer.pool)
        elif layer.kind == "flatten":
            g = g.reshape(cache)
        else:
            name, x = cache
            g, gw, gb = L.dense_backward(x, params[name + ".w"], g)
            grads[name + ".w"], grads[name + ".b"] = gw, gb
        if g is None:
            break
    return grads


def conv_layer_names(params) -> list[str]:
    return sorted({k.split(".")[0] for k in params if k.startswith("conv")},
                  key=lambda s: int(s[4:]))
