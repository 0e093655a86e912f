"""Feed-forward classifier core with dual-gradient backpropagation.

Models are immutable stacks of simple layers over float64 numpy arrays.
One reverse pass yields the loss gradient with respect to the input batch
and with respect to every named parameter at the same time; the attack
loops lean on both, so layers can also skip parameter gradients when only
the input gradient is needed.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import LabelError, NonFiniteError, ShapeError
from .seeding import fnv1a64

Array = np.ndarray

__all__ = [
    "ParamSet",
    "DualGradient",
    "Model",
    "Dense",
    "Relu",
    "Conv3x3",
    "AvgPool2",
    "Flatten",
    "init_model",
    "forward",
    "cross_entropy",
    "grad_dual",
    "input_grad",
    "backprop_logits",
    "perturb_params",
    "model_hash",
    "softmax",
]


def _require_finite(arr: Array, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {where}")


def _frozen_f64(arr) -> Array:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ParamSet:
    """Ordered, named, immutable collection of parameter tensors."""

    entries: tuple[tuple[str, Array], ...]

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(set(names)) != len(names):
            raise ShapeError(f"duplicate parameter names: {names}")
        frozen = tuple((str(n), _frozen_f64(a)) for n, a in self.entries)
        object.__setattr__(self, "entries", frozen)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamSet):
            return NotImplemented
        return self.layout() == other.layout() and all(
            np.array_equal(a, b) for (_, a), (_, b) in zip(self.entries, other.entries)
        )

    def get(self, name: str) -> Array:
        for n, a in self.entries:
            if n == name:
                return a
        raise KeyError(name)

    def layout(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        return tuple((n, a.shape) for n, a in self.entries)

    @functools.cached_property
    def total_dim(self) -> int:
        return int(sum(a.size for _, a in self.entries))

    def to_vector(self) -> Array:
        if not self.entries:
            return np.zeros(0)
        return np.concatenate([a.ravel() for _, a in self.entries])

    def with_vector(self, vec) -> "ParamSet":
        """New ParamSet with this layout and values taken from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size != self.total_dim:
            raise ShapeError(
                f"parameter vector: expected {self.total_dim} entries, got {vec.size}"
            )
        out, off = [], 0
        for n, a in self.entries:
            out.append((n, vec[off : off + a.size].reshape(a.shape)))
            off += a.size
        return ParamSet(tuple(out))

    def combine(self, other: "ParamSet", scale: float) -> "ParamSet":
        """self + scale * other, failing if the layouts differ."""
        if self.layout() != other.layout():
            raise ShapeError(
                f"parameter layout mismatch: {self.layout()} vs {other.layout()}"
            )
        return ParamSet(
            tuple(
                (n, a + scale * b)
                for (n, a), (_, b) in zip(self.entries, other.entries)
            )
        )

    def to_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in self.entries)


@dataclass(frozen=True, eq=False)
class DualGradient:
    """Gradients of the mean cross-entropy from one reverse pass."""

    wrt_input: Array
    wrt_params: ParamSet
    loss_value: float


class Layer:
    """One stage of a feed-forward stack. Stateless; parameters live in the model."""

    kind = "layer"

    def __init__(self):
        self.name = self.kind

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def param_shapes(self, in_shape: tuple[int, ...]) -> dict[str, tuple[int, ...]]:
        return {}

    def init(self, in_shape: tuple[int, ...], rng: np.random.Generator) -> dict[str, Array]:
        return {}

    def forward(self, x: Array, params: dict[str, Array]):
        raise NotImplementedError

    def backward(self, gy: Array, cache, params: dict[str, Array], want_param_grads: bool):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Array:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class Dense(Layer):
    """Affine map y = x @ w + b over the last axis."""

    kind = "dense"

    def __init__(self, units: int, bias: bool = True):
        super().__init__()
        self.units = int(units)
        self.bias = bool(bias)

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"{self.name}: expected flat input, got shape {in_shape}")
        return (self.units,)

    def param_shapes(self, in_shape):
        shapes = {"w": (in_shape[0], self.units)}
        if self.bias:
            shapes["b"] = (self.units,)
        return shapes

    def init(self, in_shape, rng):
        params = {"w": _glorot(rng, (in_shape[0], self.units), in_shape[0], self.units)}
        if self.bias:
            params["b"] = np.zeros(self.units)
        return params

    def forward(self, x, params):
        y = x @ params["w"]
        if self.bias:
            y = y + params["b"]
        return y, x

    def backward(self, gy, x, params, want_param_grads):
        gx = gy @ params["w"].T
        if not want_param_grads:
            return gx, {}
        grads = {"w": x.T @ gy}
        if self.bias:
            grads["b"] = gy.sum(axis=0)
        return gx, grads


class Relu(Layer):
    kind = "relu"

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, params):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, gy, mask, params, want_param_grads):
        return np.where(mask, gy, 0.0), {}


class Conv3x3(Layer):
    """3x3 convolution, stride 1, zero padding 1 (spatial dims preserved)."""

    kind = "conv"
    K = 3
    PAD = 1

    def __init__(self, out_channels: int):
        super().__init__()
        self.out_channels = int(out_channels)

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: expected (C, H, W) input, got shape {in_shape}")
        return (self.out_channels, in_shape[1], in_shape[2])

    def param_shapes(self, in_shape):
        return {
            "w": (self.out_channels, in_shape[0], self.K, self.K),
            "b": (self.out_channels,),
        }

    def init(self, in_shape, rng):
        c_in = in_shape[0]
        fan_in = c_in * self.K * self.K
        fan_out = self.out_channels * self.K * self.K
        return {
            "w": _glorot(rng, (self.out_channels, c_in, self.K, self.K), fan_in, fan_out),
            "b": np.zeros(self.out_channels),
        }

    @staticmethod
    def _cols(x: Array, k: int, pad: int) -> Array:
        # (B, C, H, W) -> (B*H'*W', C*k*k) patch matrix
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H', W', k, k)
        b, c, h, w = win.shape[:4]
        return (
            win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k),
            (b, h, w),
        )

    def forward(self, x, params):
        w = params["w"]
        cols, (b, h, wd) = self._cols(x, self.K, self.PAD)
        wmat = w.transpose(1, 2, 3, 0).reshape(-1, self.out_channels)
        y = (cols @ wmat).reshape(b, h, wd, self.out_channels).transpose(0, 3, 1, 2)
        y = y + params["b"][None, :, None, None]
        return y, (cols, x.shape)

    def backward(self, gy, cache, params, want_param_grads):
        cols, x_shape = cache
        w = params["w"]
        b, c_in, h, wd = x_shape
        gymat = gy.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        grads = {}
        if want_param_grads:
            gw = (cols.T @ gymat).reshape(c_in, self.K, self.K, self.out_channels)
            grads = {"w": gw.transpose(3, 0, 1, 2), "b": gymat.sum(axis=0)}
        # adjoint of "correlate with w" = correlate with the flipped, transposed kernel
        wt = w[:, :, ::-1, ::-1]
        cols2, (b2, h2, w2) = self._cols(gy, self.K, self.K - 1)
        wtmat = wt.transpose(0, 2, 3, 1).reshape(-1, c_in)
        gxp = (cols2 @ wtmat).reshape(b2, h2, w2, c_in).transpose(0, 3, 1, 2)
        p = self.PAD
        gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        return gx, grads


class AvgPool2(Layer):
    """2x2 average pooling with stride 2; spatial dims must be even."""

    kind = "pool"

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"{self.name}: expected (C, H, W) input, got shape {in_shape}")
        c, h, w = in_shape
        if h % 2 or w % 2:
            raise ShapeError(f"{self.name}: spatial dims must be even, got {in_shape}")
        return (c, h // 2, w // 2)

    def forward(self, x, params):
        b, c, h, w = x.shape
        y = x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        return y, x.shape

    def backward(self, gy, x_shape, params, want_param_grads):
        gx = np.repeat(np.repeat(gy, 2, axis=2), 2, axis=3) / 4.0
        return gx, {}


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, gy, x_shape, params, want_param_grads):
        return gy.reshape(x_shape), {}


def _expected_layout(layers, input_shape):
    """Walk the stack once: (per-layer param shapes in order, output shape)."""
    shape = tuple(int(d) for d in input_shape)
    layout = []
    for layer in layers:
        for pname, pshape in layer.param_shapes(shape).items():
            layout.append((f"{layer.name}.{pname}", tuple(pshape)))
        shape = layer.out_shape(shape)
    return tuple(layout), shape


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable classifier: layer stack plus one named parameter set."""

    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    params: ParamSet
    arch_tag: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        layout, out_shape = _expected_layout(self.layers, self.input_shape)
        if layout != self.params.layout():
            raise ShapeError(
                f"parameter layout mismatch: expected {layout}, got {self.params.layout()}"
            )
        if len(out_shape) != 1:
            raise ShapeError(f"model output must be flat logits, got shape {out_shape}")
        object.__setattr__(self, "_out_dim", int(out_shape[0]))

    @property
    def n_classes(self) -> int:
        return self._out_dim

    @functools.cached_property
    def _params_by_layer(self) -> dict[str, dict[str, Array]]:
        grouped: dict[str, dict[str, Array]] = {l.name: {} for l in self.layers}
        for name, arr in self.params:
            layer_name, pname = name.split(".", 1)
            grouped[layer_name][pname] = arr
        return grouped

    def layer_params(self, layer: Layer) -> dict[str, Array]:
        return self._params_by_layer[layer.name]

    def with_params(self, params: ParamSet) -> "Model":
        return Model(self.input_shape, self.layers, params, self.arch_tag)

    def with_param_values(self, values: dict[str, Array]) -> "Model":
        """Replace named parameters; every name must already exist."""
        known = {n for n, _ in self.params}
        unknown = set(values) - known
        if unknown:
            raise ShapeError(f"unknown parameter names: {sorted(unknown)}")
        entries = tuple(
            (n, values[n] if n in values else a) for n, a in self.params
        )
        return self.with_params(ParamSet(entries))


def name_layers(layers):
    """Stamp unique stack-order names (dense1, relu1, ...) onto layers.

    Parameter keys embed these names, so any path that rebuilds a layer
    stack for an existing ParamSet must apply the same numbering.
    """
    counters: dict[str, int] = {}
    for layer in layers:
        counters[layer.kind] = counters.get(layer.kind, 0) + 1
        layer.name = f"{layer.kind}{counters[layer.kind]}"
    return layers


def init_model(
    layers,
    input_shape: tuple[int, ...],
    seed: int,
    arch_tag: str = "custom",
) -> Model:
    """Assign unique layer names and draw fresh parameters.

    Weights are uniform Glorot draws, biases zero; each layer consumes the
    shared generator in stack order, so the init is reproducible per seed.
    """
    name_layers(layers)
    rng = np.random.default_rng(seed)
    shape = tuple(int(d) for d in input_shape)
    entries = []
    for layer in layers:
        for pname, arr in layer.init(shape, rng).items():
            entries.append((f"{layer.name}.{pname}", arr))
        shape = layer.out_shape(shape)
    return Model(input_shape, tuple(layers), ParamSet(tuple(entries)), arch_tag)


def _check_input(model: Model, x) -> Array:
    xb = np.asarray(x, dtype=np.float64)
    if xb.ndim != len(model.input_shape) + 1 or xb.shape[1:] != model.input_shape:
        raise ShapeError(
            f"input: expected (B, {', '.join(map(str, model.input_shape))}), got {xb.shape}"
        )
    if xb.shape[0] < 1:
        raise ShapeError("input: batch must hold at least one sample")
    _require_finite(xb, "input")
    return xb


def _check_labels(y, batch: int, k: int) -> Array:
    labels = np.asarray(y)
    if labels.shape != (batch,):
        raise ShapeError(f"labels: expected shape ({batch},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        labels = labels.astype(np.int64)
        if not np.array_equal(labels, np.asarray(y)):
            raise LabelError("labels must be integers")
    if labels.min() < 0 or labels.max() >= k:
        raise LabelError(f"label out of range [0, {k}): {labels.min()}..{labels.max()}")
    return labels.astype(np.int64)


def _forward_cached(model: Model, x) -> tuple[Array, list]:
    h = _check_input(model, x)
    caches = []
    for layer in model.layers:
        h, cache = layer.forward(h, model.layer_params(layer))
        _require_finite(h, f"forward({layer.name})")
        caches.append(cache)
    return h, caches


def forward(model: Model, x) -> Array:
    """Raw logits for a batch, float64, shape (B, n_classes)."""
    logits, _ = _forward_cached(model, x)
    return logits


def softmax(logits: Array) -> Array:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _ce_pieces(logits: Array, labels: Array):
    # log-sum-exp with max shift keeps exp() in range for any logit scale
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    per_sample = lse - z[np.arange(len(labels)), labels]
    return per_sample, softmax(logits)


def cross_entropy(logits, y) -> float:
    """Mean softmax cross-entropy of a logit batch against integer labels."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError(f"logits: expected (B, K), got {logits.shape}")
    _require_finite(logits, "logits")
    labels = _check_labels(y, logits.shape[0], logits.shape[1])
    per_sample, _ = _ce_pieces(logits, labels)
    loss = float(per_sample.mean())
    _require_finite(np.asarray(loss), "cross_entropy")
    return loss


def _backward(model: Model, caches: list, d_out: Array, want_param_grads: bool):
    g = d_out
    pgrads: dict[str, Array] = {}
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        g, layer_grads = layer.backward(
            g, cache, model.layer_params(layer), want_param_grads
        )
        _require_finite(g, f"backward({layer.name})")
        for pname, arr in layer_grads.items():
            _require_finite(arr, f"backward({layer.name}.{pname})")
            pgrads[f"{layer.name}.{pname}"] = arr
    return g, pgrads


def grad_dual(model: Model, x, y) -> DualGradient:
    """Loss value plus gradients wrt the input batch and all parameters.

    The loss is the mean cross-entropy over the batch; one reverse pass
    fills both gradient targets.
    """
    logits, caches = _forward_cached(model, x)
    labels = _check_labels(y, logits.shape[0], logits.shape[1])
    per_sample, probs = _ce_pieces(logits, labels)
    loss = float(per_sample.mean())
    _require_finite(np.asarray(loss), "cross_entropy")
    d_logits = probs.copy()
    d_logits[np.arange(len(labels)), labels] -= 1.0
    d_logits /= len(labels)
    gx, pgrads = _backward(model, caches, d_logits, want_param_grads=True)
    wrt_params = ParamSet(tuple((n, pgrads[n]) for n, _ in model.params))
    return DualGradient(wrt_input=gx, wrt_params=wrt_params, loss_value=loss)


def input_grad(model: Model, x, y, reduction: str = "mean") -> Array:
    """Input gradient only (parameter gradients skipped for speed).

    reduction="mean" differentiates the batch-mean loss; "sum" gives each
    row the gradient of that sample's own loss.
    """
    if reduction not in ("mean", "sum"):
        raise ShapeError(f"unknown reduction {reduction!r}")
    logits, caches = _forward_cached(model, x)
    labels = _check_labels(y, logits.shape[0], logits.shape[1])
    _, probs = _ce_pieces(logits, labels)
    d_logits = probs.copy()
    d_logits[np.arange(len(labels)), labels] -= 1.0
    if reduction == "mean":
        d_logits /= len(labels)
    gx, _ = _backward(model, caches, d_logits, want_param_grads=False)
    return gx


def backprop_logits(model: Model, x, d_logits, want_param_grads: bool = False):
    """Generic vector-Jacobian product: seed the reverse pass at the logits."""
    logits, caches = _forward_cached(model, x)
    d = np.asarray(d_logits, dtype=np.float64)
    if d.shape != logits.shape:
        raise ShapeError(f"d_logits: expected {logits.shape}, got {d.shape}")
    gx, pgrads = _backward(model, caches, d, want_param_grads)
    if not want_param_grads:
        return gx, None
    return gx, ParamSet(tuple((n, pgrads[n]) for n, _ in model.params))


def perturb_params(model: Model, eta: ParamSet, scale: float) -> Model:
    """New model with parameters theta + scale * eta (layouts must match)."""
    return model.with_params(model.params.combine(eta, float(scale)))


def model_hash(model: Model) -> int:
    """64-bit FNV-1a over the architecture tag and raw parameter bytes."""
    return fnv1a64(model.arch_tag.encode("utf-8") + b"\x00" + model.params.to_bytes())
