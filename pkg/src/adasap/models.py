"""Small channel-structured models whose parameters partition into neurons.

A "neuron" here is one output channel of a layer together with its bias
element: the unit of scoring, perturbation and pruning. Each prunable layer
carries an alive/dead mask over its output channels; forward passes multiply
weights by the mask, so dead channels contribute exactly zero regardless of
their stored values and receive exactly zero gradient.

Two architectures: ``mlp`` (fully connected, hidden layers prunable) and
``small_cnn`` (conv stack with 2x2 max-pool after each conv, then a linear
classifier head). The classifier head is never prunable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .tensor import Tensor


@dataclass
class ModelSpec:
    arch: str = "small_cnn"  # "mlp" | "small_cnn"
    input_shape: tuple[int, int, int] = (1, 28, 28)
    conv_channels: tuple[int, ...] = (8, 16)
    hidden_sizes: tuple[int, ...] = (128, 64)
    classes: int = 10
    kernel_size: int = 3
    pool: int = 2

    def validate(self) -> None:
        if self.arch not in ("mlp", "small_cnn"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.arch == "small_cnn":
            if not self.conv_channels:
                raise ValueError("small_cnn needs at least one conv layer")
            c, h, w = self.input_shape
            factor = self.pool ** len(self.conv_channels)
            if h % factor or w % factor:
                raise ValueError(
                    f"input {h}x{w} not divisible by pool factor {factor}"
                )
        if self.arch == "mlp" and not self.hidden_sizes:
            raise ValueError("mlp needs at least one hidden layer")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "input_shape": list(self.input_shape),
            "conv_channels": list(self.conv_channels),
            "hidden_sizes": list(self.hidden_sizes),
            "classes": self.classes,
            "kernel_size": self.kernel_size,
            "pool": self.pool,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            arch=d["arch"],
            input_shape=tuple(d["input_shape"]),
            conv_channels=tuple(d["conv_channels"]),
            hidden_sizes=tuple(d["hidden_sizes"]),
            classes=int(d["classes"]),
            kernel_size=int(d["kernel_size"]),
            pool=int(d["pool"]),
        )


@dataclass
class ParameterPartition:
    """One output channel of a layer: its weight slice plus bias element."""

    id: str
    layer: "ParamLayer"
    channel_index: int
    prunable: bool

    @property
    def alive(self) -> bool:
        return bool(self.layer.mask[self.channel_index] != 0.0)

    @property
    def tensors(self) -> tuple[Tensor, Tensor]:
        return (self.layer.weight, self.layer.bias)

    def weight_vector(self) -> np.ndarray:
        c = self.channel_index
        w, b = self.tensors
        return np.concatenate([w.data[c].ravel(), b.data[c : c + 1]])

    def grad_vector(self) -> np.ndarray:
        c = self.channel_index
        w, b = self.tensors
        if w.grad is None or b.grad is None:
            raise ValueError(f"partition {self.id}: gradients not populated")
        return np.concatenate([w.grad[c].ravel(), b.grad[c : c + 1]])

    def add_(self, vec: np.ndarray) -> None:
        c = self.channel_index
        w, b = self.tensors
        n = w.data[c].size
        w.data[c] += vec[:n].reshape(w.data[c].shape)
        b.data[c] += vec[n]

    def zero_(self) -> None:
        c = self.channel_index
        w, b = self.tensors
        w.data[c] = 0.0
        b.data[c] = 0.0

    def scalar_count(self) -> int:
        w, b = self.tensors
        return int(w.data[self.channel_index].size + 1)


class ParamLayer:
    """Base for layers with (weight, bias) parameters and a channel mask."""

    def __init__(self, name: str, prunable: bool):
        self.name = name
        self.prunable = prunable
        self.weight: Tensor
        self.bias: Tensor
        self.mask: np.ndarray
        self._mask_t: Tensor

    def out_channels(self) -> int:
        return self.weight.shape[0]

    def alive_channels(self) -> np.ndarray:
        return np.flatnonzero(self.mask != 0.0)

    def kill_channel(self, c: int) -> None:
        self.mask[c] = 0.0
        self._sync_mask()

    def _sync_mask(self) -> None:
        extra = (1,) * (self.weight.data.ndim - 1)
        self._mask_t.data[...] = self.mask.reshape((self.out_channels(),) + extra)

    def _init_mask(self, out: int, dtype) -> None:
        self.mask = np.ones(out, dtype=dtype)
        extra = (1,) * (self.weight.data.ndim - 1)
        self._mask_t = Tensor(self.mask.reshape((out,) + extra).copy())

    def effective_params(self) -> tuple[Tensor, Tensor]:
        """Weight and bias with dead channels zeroed (tape-multiplied mask)."""
        if not self.prunable or bool(np.all(self.mask != 0.0)):
            return self.weight, self.bias
        w = T.mul(self.weight, self._mask_t)
        b = T.mul(self.bias, Tensor(self.mask))
        return w, b

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class Linear(ParamLayer):
    def __init__(self, name: str, in_features: int, out_features: int, rng, prunable: bool, dtype):
        super().__init__(name, prunable)
        bound = float(np.sqrt(6.0 / in_features))
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(out_features, in_features)).astype(dtype),
            requires_grad=True,
        )
        bbound = float(1.0 / np.sqrt(in_features))
        self.bias = Tensor(
            rng.uniform(-bbound, bbound, size=out_features).astype(dtype), requires_grad=True
        )
        self._init_mask(out_features, dtype)

    def forward(self, x: Tensor) -> Tensor:
        w, b = self.effective_params()
        return T.add(T.matmul(x, T.transpose(w)), b)


class Conv2d(ParamLayer):
    def __init__(self, name, in_channels, out_channels, kernel, rng, prunable, dtype, padding=1):
        super().__init__(name, prunable)
        fan_in = in_channels * kernel * kernel
        bound = float(np.sqrt(6.0 / fan_in))
        self.weight = Tensor(
            rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel, kernel)).astype(dtype),
            requires_grad=True,
        )
        bbound = float(1.0 / np.sqrt(fan_in))
        self.bias = Tensor(
            rng.uniform(-bbound, bbound, size=out_channels).astype(dtype), requires_grad=True
        )
        self.padding = padding
        self._init_mask(out_channels, dtype)

    def forward(self, x: Tensor) -> Tensor:
        w, b = self.effective_params()
        return T.conv2d(x, w, b, stride=1, padding=self.padding)


class Model:
    def __init__(self, spec: ModelSpec, layers: list[ParamLayer], dtype):
        self.spec = spec
        self.param_layers = layers
        self.dtype = dtype
        self.partitions: list[ParameterPartition] = []
        for layer in layers:
            for c in range(layer.out_channels()):
                self.partitions.append(
                    ParameterPartition(
                        id=f"{layer.name}:c{c}",
                        layer=layer,
                        channel_index=c,
                        prunable=layer.prunable,
                    )
                )

    # structure ------------------------------------------------------------
    def trainable_params(self) -> list[Tensor]:
        out = []
        for layer in self.param_layers:
            out.extend(layer.params())
        return out

    def prunable_partitions(self) -> list[ParameterPartition]:
        return [p for p in self.partitions if p.prunable]

    def alive_partitions(self) -> list[ParameterPartition]:
        return [p for p in self.partitions if p.alive]

    def layer_by_name(self, name: str) -> ParamLayer:
        for layer in self.param_layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    # compute ---------------------------------------------------------------
    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if self.spec.arch == "mlp":
            if x.data.ndim > 2:
                x = T.reshape(x, (x.shape[0], -1))
            for layer in self.param_layers[:-1]:
                x = T.relu(layer.forward(x))
            return self.param_layers[-1].forward(x)
        # small_cnn
        if x.data.ndim != 4:
            raise T.ShapeError(f"small_cnn expects (batch, C, H, W) input, got {x.shape}")
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise T.ShapeError(
                f"input shape {tuple(x.shape[1:])} != spec {tuple(self.spec.input_shape)}"
            )
        for layer in self.param_layers[:-1]:
            x = T.maxpool2d(T.relu(layer.forward(x)), self.spec.pool)
        x = T.reshape(x, (x.shape[0], -1))
        return self.param_layers[-1].forward(x)

    def loss(self, batch) -> Tensor:
        xb, yb = batch
        return T.softmax_cross_entropy(self.forward(xb), yb)

    def accuracy(self, x, y, batch_size: int = 256) -> float:
        n = len(y)
        correct = 0
        with T.no_grad():
            for start in range(0, n, batch_size):
                logits = self.forward(x[start : start + batch_size]).data
                correct += int((logits.argmax(axis=1) == y[start : start + batch_size]).sum())
        return correct / n

    # channel bookkeeping ----------------------------------------------------
    def alive_counts(self) -> dict[str, int]:
        return {l.name: int((l.mask != 0.0).sum()) for l in self.param_layers}

    def structural_param_count(self, dense: bool = False) -> int:
        """Scalar count of the physically reduced network implied by the masks.

        A dead channel removes its own weight row and bias plus the matching
        input slice of the next parameterised layer, exactly what export
        produces.
        """
        spec = self.spec
        total = 0
        if spec.arch == "mlp":
            prev = int(np.prod(spec.input_shape))
            for layer in self.param_layers:
                out = layer.out_channels() if dense else len(layer.alive_channels())
                total += out * prev + out
                prev = out
        else:
            prev = spec.input_shape[0]
            k = spec.kernel_size
            for layer in self.param_layers[:-1]:
                out = layer.out_channels() if dense else len(layer.alive_channels())
                total += out * prev * k * k + out
                prev = out
            c, h, w = spec.input_shape
            factor = spec.pool ** len(spec.conv_channels)
            spatial = (h // factor) * (w // factor)
            head = self.param_layers[-1]
            total += head.out_channels() * prev * spatial + head.out_channels()
        return total


def build_model(spec: ModelSpec, seed: int, dtype=None) -> Model:
    """Deterministically initialise a model (Kaiming-uniform, fan-in)."""
    spec.validate()
    dtype = np.dtype(dtype or T.DEFAULT_DTYPE).type
    rng = np.random.default_rng(seed)
    layers: list[ParamLayer] = []
    if spec.arch == "mlp":
        prev = int(np.prod(spec.input_shape))
        for i, width in enumerate(spec.hidden_sizes):
            layers.append(Linear(f"fc{i + 1}", prev, width, rng, prunable=True, dtype=dtype))
            prev = width
        layers.append(Linear("head", prev, spec.classes, rng, prunable=False, dtype=dtype))
    else:
        cin, h, w = spec.input_shape
        prev = cin
        for i, ch in enumerate(spec.conv_channels):
            layers.append(
                Conv2d(
                    f"conv{i + 1}", prev, ch, spec.kernel_size, rng, prunable=True, dtype=dtype,
                    padding=spec.kernel_size // 2,
                )
            )
            prev = ch
        factor = spec.pool ** len(spec.conv_channels)
        feat = prev * (h // factor) * (w // factor)
        layers.append(Linear("head", feat, spec.classes, rng, prunable=False, dtype=dtype))
    return Model(spec, layers, dtype)


def partition_view(model: Model) -> list[ParameterPartition]:
    """Stable, deterministic partition table (layer order, then channel index)."""
    return list(model.partitions)


# ---------------------------------------------------------------------------
# physical reduction (dead channels deleted)
# ---------------------------------------------------------------------------


def reduce_model(model: Model) -> Model:
    """Build a physically shrunk copy of ``model`` with dead channels deleted."""
    spec = model.spec
    alive = {l.name: l.alive_channels() for l in model.param_layers}
    if spec.arch == "mlp":
        new_spec = ModelSpec(
            arch="mlp",
            input_shape=spec.input_shape,
            hidden_sizes=tuple(len(alive[l.name]) for l in model.param_layers[:-1]),
            conv_channels=(),
            classes=spec.classes,
            kernel_size=spec.kernel_size,
            pool=spec.pool,
        )
    else:
        new_spec = ModelSpec(
            arch="small_cnn",
            input_shape=spec.input_shape,
            conv_channels=tuple(len(alive[l.name]) for l in model.param_layers[:-1]),
            hidden_sizes=spec.hidden_sizes,
            classes=spec.classes,
            kernel_size=spec.kernel_size,
            pool=spec.pool,
        )
    reduced = build_model(new_spec, seed=0, dtype=model.dtype)
    prev_alive: np.ndarray | None = None
    for src, dst in zip(model.param_layers, reduced.param_layers):
        keep = alive[src.name]
        w = src.weight.data[keep] if src.prunable else src.weight.data.copy()
        b = src.bias.data[keep] if src.prunable else src.bias.data.copy()
        if prev_alive is not None:
            if isinstance(src, Conv2d):
                w = w[:, prev_alive]
            elif spec.arch == "mlp":
                w = w[:, prev_alive]
            else:
                # linear head after flatten: select the feature block of each
                # surviving channel of the last conv layer
                c, h, wid = spec.input_shape
                factor = spec.pool ** len(spec.conv_channels)
                spatial = (h // factor) * (wid // factor)
                cols = w.reshape(w.shape[0], -1, spatial)[:, prev_alive]
                w = cols.reshape(w.shape[0], -1)
        dst.weight.data[...] = w
        dst.bias.data[...] = b
        prev_alive = keep if src.prunable else None
    return reduced


# ---------------------------------------------------------------------------
# checkpoint glue
# ---------------------------------------------------------------------------


def save_model(path, model: Model, meta: dict | None = None) -> None:
    tensors: dict[str, np.ndarray] = {}
    for layer in model.param_layers:
        tensors[f"{layer.name}.weight"] = layer.weight.data
        tensors[f"{layer.name}.bias"] = layer.bias.data
        tensors[f"{layer.name}.mask"] = layer.mask
    full_meta = {"model_spec": model.spec.to_dict(), "dtype": np.dtype(model.dtype).name}
    full_meta.update(meta or {})
    save_checkpoint(path, tensors, full_meta)


def load_model(path) -> tuple[Model, dict]:
    tensors, meta = load_checkpoint(path)
    spec = ModelSpec.from_dict(meta["model_spec"])
    dtype = np.dtype(meta.get("dtype", "float64")).type
    model = build_model(spec, seed=0, dtype=dtype)
    for layer in model.param_layers:
        layer.weight.data[...] = tensors[f"{layer.name}.weight"]
        layer.bias.data[...] = tensors[f"{layer.name}.bias"]
        layer.mask[...] = tensors[f"{layer.name}.mask"]
        layer._sync_mask()
    return model, meta
