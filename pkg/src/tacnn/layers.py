"""Layer implementations, architecture descriptions and parameter accounting.

Activations flow as ``(batch, channels, height, width)`` arrays through the
convolution stage and ``(batch, features)`` after flattening. Every layer is a
pair of pure functions: ``forward(x) -> (out, cache)`` and
``backward(cache, grad_out) -> (grad_in, param_grads)``.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core
from .encoding import (
    normalize_backward,
    normalize_channel,
    scatter_columns,
    scatter_windows,
    window_columns,
    windows,
)
from .errors import DimensionError, EncodingError

# ---------------------------------------------------------------------------
# architecture descriptors


@dataclass(frozen=True)
class TensorConvSpec:
    in_channels: int
    out_channels: int
    window: int = 3
    stride: int = 1
    kind = "tconv"

    @property
    def order(self):
        return self.window * self.window

    def n_params(self):
        return self.in_channels * self.out_channels * (1 << self.order)

    def describe(self):
        return f"tconv in={self.in_channels} out={self.out_channels} window={self.window} stride={self.stride}"


@dataclass(frozen=True)
class BaselineConvSpec:
    in_channels: int
    out_channels: int
    window: int = 3
    stride: int = 1
    activation: str = "relu"
    kind = "conv"

    def n_params(self):
        return self.out_channels * (self.in_channels * self.window * self.window + 1)

    def describe(self):
        return (
            f"conv in={self.in_channels} out={self.out_channels} window={self.window} "
            f"stride={self.stride} act={self.activation}"
        )


@dataclass(frozen=True)
class FlattenSpec:
    kind = "flatten"

    def n_params(self):
        return 0

    def describe(self):
        return "flatten"


@dataclass(frozen=True)
class DenseSpec:
    in_dim: int
    out_dim: int
    activation: str = "none"
    kind = "dense"

    def n_params(self):
        return self.out_dim * (self.in_dim + 1)

    def describe(self):
        return f"dense in={self.in_dim} out={self.out_dim} act={self.activation}"


_CONV_KINDS = ("tconv", "conv")
_ACTIVATIONS = ("relu", "none")


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_shape: tuple = (1, 28, 28)
    num_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.shapes()

    def shapes(self):
        """Output shape after every layer; raises DimensionError if the chain breaks."""
        shape = self.input_shape
        out = []
        flattened = 0
        for i, layer in enumerate(self.layers):
            where = f"layer {i} ({layer.kind})"
            if layer.kind in _CONV_KINDS:
                if len(shape) != 3:
                    raise DimensionError(f"{where}: convolution after flatten")
                c, h, w = shape
                if layer.in_channels != c:
                    raise DimensionError(f"{where}: expects {layer.in_channels} channels, got {c}")
                if layer.window > min(h, w):
                    raise DimensionError(f"{where}: window {layer.window} exceeds {h}x{w} input")
                if getattr(layer, "activation", "none") not in _ACTIVATIONS:
                    raise DimensionError(f"{where}: unknown activation {layer.activation!r}")
                shape = (
                    layer.out_channels,
                    (h - layer.window) // layer.stride + 1,
                    (w - layer.window) // layer.stride + 1,
                )
            elif layer.kind == "flatten":
                flattened += 1
                if len(shape) != 3:
                    raise DimensionError(f"{where}: second flatten")
                shape = (shape[0] * shape[1] * shape[2],)
            elif layer.kind == "dense":
                if len(shape) != 1:
                    raise DimensionError(f"{where}: dense layer before flatten")
                if layer.in_dim != shape[0]:
                    raise DimensionError(f"{where}: expects {layer.in_dim} inputs, got {shape[0]}")
                if layer.activation not in _ACTIVATIONS:
                    raise DimensionError(f"{where}: unknown activation {layer.activation!r}")
                shape = (layer.out_dim,)
            else:
                raise DimensionError(f"{where}: unknown layer kind")
            out.append(shape)
        if flattened != 1:
            raise DimensionError(f"model needs exactly one flatten, found {flattened}")
        if shape != (self.num_classes,):
            raise DimensionError(f"model output shape {shape} != ({self.num_classes},)")
        return out

    def describe(self):
        c, h, w = self.input_shape
        parts = [f"input={c}x{h}x{w} classes={self.num_classes}"]
        parts += [layer.describe() for layer in self.layers]
        return " | ".join(parts)

    @classmethod
    def parse(cls, text):
        parts = [p.strip() for p in text.split("|")]
        head = dict(kv.split("=") for kv in parts[0].split())
        try:
            input_shape = tuple(int(v) for v in head["input"].split("x"))
            layers = [_parse_layer(p) for p in parts[1:]]
            return cls(layers, input_shape, int(head["classes"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise DimensionError(f"cannot parse model description {text!r}: {exc}") from exc


def _parse_layer(text):
    kind, *fields = text.split()
    kw = dict(f.split("=") for f in fields)
    if kind == "tconv":
        return TensorConvSpec(int(kw["in"]), int(kw["out"]), int(kw["window"]), int(kw["stride"]))
    if kind == "conv":
        return BaselineConvSpec(
            int(kw["in"]), int(kw["out"]), int(kw["window"]), int(kw["stride"]), kw["act"]
        )
    if kind == "flatten":
        return FlattenSpec()
    if kind == "dense":
        return DenseSpec(int(kw["in"]), int(kw["out"]), kw["act"])
    raise ValueError(f"unknown layer kind {kind!r}")


def _head(conv_layers, input_shape, hidden, num_classes):
    c, h, w = input_shape
    for layer in conv_layers:
        c = layer.out_channels
        h = (h - layer.window) // layer.stride + 1
        w = (w - layer.window) // layer.stride + 1
    flat = c * h * w
    return [FlattenSpec(), DenseSpec(flat, hidden, "relu"), DenseSpec(hidden, num_classes, "none")]


def tacnn_spec(kernels=(1,), input_shape=(1, 28, 28), hidden=128, num_classes=10, window=3, stride=1):
    """TACNN with one tensor-convolution layer per entry of ``kernels``.

    ``kernels[i]`` is the number of output channels of layer i, so layer i holds
    ``kernels[i-1] * kernels[i]`` tensor kernels.
    """
    convs = []
    c = input_shape[0]
    for n in kernels:
        convs.append(TensorConvSpec(c, int(n), window, stride))
        c = int(n)
    return ModelSpec(convs + _head(convs, input_shape, hidden, num_classes), input_shape, num_classes)


def cnn_spec(kernels=(1,), input_shape=(1, 28, 28), hidden=128, num_classes=10, window=3, stride=1):
    """Baseline CNN counterpart of ``tacnn_spec`` (ReLU after each convolution)."""
    convs = []
    c = input_shape[0]
    for n in kernels:
        convs.append(BaselineConvSpec(c, int(n), window, stride, "relu"))
        c = int(n)
    return ModelSpec(convs + _head(convs, input_shape, hidden, num_classes), input_shape, num_classes)


@dataclass
class ParameterCount:
    per_layer: list = field(default_factory=list)
    conv: int = 0
    dense: int = 0

    @property
    def total(self):
        return self.conv + self.dense


def parameter_count(spec):
    count = ParameterCount()
    for layer in spec.layers:
        n = layer.n_params()
        count.per_layer.append((layer.describe(), n))
        if layer.kind in _CONV_KINDS:
            count.conv += n
        else:
            count.dense += n
    return count


# ---------------------------------------------------------------------------
# forward / backward kernels


def _check_unit_range(x):
    lo, hi = float(x.min()), float(x.max())
    if lo < 0 or hi > 1 or not np.isfinite(lo + hi):
        raise EncodingError(f"tensor convolution input outside [0, 1] (min {lo}, max {hi})")


def _as_batch(x, channels):
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != channels:
        raise DimensionError(f"expected {channels}-channel planes, got shape {x.shape}")
    return x, single


def tensor_conv_forward(kernels, x, window=3, stride=1):
    """Multichannel tensor convolution.

    ``kernels`` has shape ``(in, out, 2**(window**2))`` and ``x`` shape
    ``(batch, in, H, W)`` (or ``(in, H, W)``). Output channel j at each position
    is the sum over input channels i of the contraction of the encoded patch of
    channel i with kernel ``(i, j)``.
    """
    cin, cout, size = kernels.shape
    if size != 1 << (window * window):
        raise DimensionError(f"kernel table size {size} does not match window {window}")
    x, single = _as_batch(x, cin)
    _check_unit_range(x)
    b, _, h, w = x.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    y = np.zeros((cout, b * ho * wo), dtype=np.result_type(x, kernels))
    for i in range(cin):
        y += tensor_core.contract_columns(window_columns(x[:, i], window, stride), kernels[i])
    y = y.reshape(cout, b, ho, wo).transpose(1, 0, 2, 3)
    return y[0] if single else y


def tensor_conv_backward(kernels, x, grad_out, window=3, stride=1, need_input=True):
    """Returns ``(grad_kernels, grad_x or None)`` for upstream ``grad_out``."""
    cin, cout, _ = kernels.shape
    x, single = _as_batch(x, cin)
    grad_out = np.asarray(grad_out)
    if single:
        grad_out = grad_out[None]
    b, _, h, w = x.shape
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    if grad_out.shape != (b, cout, ho, wo):
        raise DimensionError(f"upstream gradient shape {grad_out.shape} != {(b, cout, ho, wo)}")
    g = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(cout, -1)
    dk = np.empty(kernels.shape, dtype=np.result_type(kernels, grad_out))
    dx = np.zeros_like(x, dtype=dk.dtype) if need_input else None
    for i in range(cin):
        cols = window_columns(x[:, i], window, stride)
        dk[i], gp = tensor_core.contract_columns_backward(cols, kernels[i], g, need_pixels=need_input)
        if need_input:
            dx[:, i] = scatter_columns(gp.reshape(-1, b, ho, wo), window, stride, h, w)
    if single and dx is not None:
        dx = dx[0]
    return dk, dx


def _im2col(x, window, stride):
    cols = windows(x, window, stride)  # (B, C, Ho, Wo, L*L)
    b, c, ho, wo, n = cols.shape
    return cols.transpose(0, 2, 3, 1, 4).reshape(b * ho * wo, c * n), (b, c, ho, wo, n)


def baseline_conv_forward(weights, bias, x, stride=1, activation="relu"):
    """Cross-correlation ``sum_in sum_window w * x + bias`` with optional ReLU.

    Returns ``(out, pre_activation)``.
    """
    cout, cin, window, _ = weights.shape
    x, single = _as_batch(x, cin)
    cols, (b, _, ho, wo, _) = _im2col(x, window, stride)
    z = cols @ weights.reshape(cout, -1).T + bias
    z = z.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    y = np.maximum(z, 0) if activation == "relu" else z
    return (y[0], z[0]) if single else (y, z)


def baseline_conv_backward(weights, x, pre_activation, grad_out, stride=1, activation="relu", need_input=True):
    cout, cin, window, _ = weights.shape
    x, single = _as_batch(x, cin)
    grad_out = np.asarray(grad_out)
    z = np.asarray(pre_activation)
    if single:
        grad_out, z = grad_out[None], z[None]
    if activation == "relu":
        grad_out = grad_out * (z > 0)
    cols, (b, c, ho, wo, n) = _im2col(x, window, stride)
    if grad_out.shape != (b, cout, ho, wo):
        raise DimensionError(f"upstream gradient shape {grad_out.shape} != {(b, cout, ho, wo)}")
    gz = grad_out.transpose(0, 2, 3, 1).reshape(-1, cout)
    dw = (gz.T @ cols).reshape(weights.shape)
    db = gz.sum(axis=0)
    dx = None
    if need_input:
        gcols = (gz @ weights.reshape(cout, -1)).reshape(b, ho, wo, c, n).transpose(0, 3, 1, 2, 4)
        dx = scatter_windows(gcols, window, stride, x.shape[2], x.shape[3])
        if single:
            dx = dx[0]
    return dw, db, dx


def dense_forward(weights, bias, x, activation="none"):
    x = np.asarray(x)
    if x.shape[-1] != weights.shape[1]:
        raise DimensionError(f"dense layer expects {weights.shape[1]} inputs, got {x.shape[-1]}")
    z = x @ weights.T + bias
    return (np.maximum(z, 0) if activation == "relu" else z), z


def dense_backward(weights, x, pre_activation, grad_out, activation="none"):
    if activation == "relu":
        grad_out = grad_out * (pre_activation > 0)
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad_out)
    return g2.T @ x2, g2.sum(axis=0), grad_out @ weights


def flatten_forward(x):
    """Channel-major, then row-major: ``(B, C, H, W) -> (B, C*H*W)``."""
    return x.reshape(x.shape[0], -1)


def flatten_backward(grad_out, shape):
    return grad_out.reshape(shape)


# ---------------------------------------------------------------------------
# model


def _needs_normalize(spec):
    flags = []
    for i, layer in enumerate(spec.layers):
        nxt = spec.layers[i + 1] if i + 1 < len(spec.layers) else None
        flags.append(layer.kind in _CONV_KINDS and nxt is not None and nxt.kind in _CONV_KINDS)
    return flags


def init_params(spec, rng, dtype=np.float32):
    """Fresh parameters in spec order: one list of arrays per layer."""
    params = []
    for layer in spec.layers:
        if layer.kind == "tconv":
            k = rng.standard_normal((layer.in_channels, layer.out_channels, 1 << layer.order))
            params.append([k.astype(dtype)])
        elif layer.kind == "conv":
            fan_in = layer.in_channels * layer.window * layer.window
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, (layer.out_channels, layer.in_channels, layer.window, layer.window))
            b = rng.uniform(-bound, bound, layer.out_channels)
            params.append([w.astype(dtype), b.astype(dtype)])
        elif layer.kind == "dense":
            bound = 1.0 / np.sqrt(layer.in_dim)
            w = rng.uniform(-bound, bound, (layer.out_dim, layer.in_dim))
            b = rng.uniform(-bound, bound, layer.out_dim)
            params.append([w.astype(dtype), b.astype(dtype)])
        else:
            params.append([])
    return params


class Model:
    """A ModelSpec together with its parameters.

    ``params`` is a list (one entry per layer) of lists of arrays. Tensor
    convolutions hold ``[kernels]`` with shape ``(in, out, 2**N)``; baseline
    convolutions and dense layers hold ``[weights, bias]``.
    """

    def __init__(self, spec, params=None, rng=None, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        if params is None:
            params = init_params(spec, rng if rng is not None else np.random.default_rng(0), self.dtype)
        self.params = params
        self._normalize = _needs_normalize(spec)
        self._check_params()

    def _check_params(self):
        for layer, ps in zip(self.spec.layers, self.params):
            if layer.kind == "tconv":
                want = [(layer.in_channels, layer.out_channels, 1 << layer.order)]
            elif layer.kind == "conv":
                want = [(layer.out_channels, layer.in_channels, layer.window, layer.window), (layer.out_channels,)]
            elif layer.kind == "dense":
                want = [(layer.out_dim, layer.in_dim), (layer.out_dim,)]
            else:
                want = []
            if [p.shape for p in ps] != want:
                raise DimensionError(f"{layer.describe()}: parameter shapes {[p.shape for p in ps]} != {want}")

    @classmethod
    def zeros(cls, spec, dtype=np.float32):
        params = init_params(spec, np.random.default_rng(0), dtype)
        return cls(spec, [[np.zeros_like(p) for p in ps] for ps in params], dtype=dtype)

    def flat_params(self):
        return [p for ps in self.params for p in ps]

    def forward(self, x):
        """Logits for a batch ``(B, C, H, W)``; returns ``(logits, caches)``."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.spec.input_shape:
            raise DimensionError(f"input shape {x.shape[1:]} != {self.spec.input_shape}")
        caches = []
        for layer, ps, norm in zip(self.spec.layers, self.params, self._normalize):
            if layer.kind == "tconv":
                y = tensor_conv_forward(ps[0], x, layer.window, layer.stride)
                caches.append((x, None))
            elif layer.kind == "conv":
                y, z = baseline_conv_forward(ps[0], ps[1], x, layer.stride, layer.activation)
                caches.append((x, z))
            elif layer.kind == "flatten":
                y = flatten_forward(x)
                caches.append((x.shape, None))
            else:
                y, z = dense_forward(ps[0], ps[1], x, layer.activation)
                caches.append((x, z))
            if norm:
                caches[-1] = caches[-1] + (y,)
                y = normalize_channel(y)
            x = y
        return x, caches

    def backward(self, caches, grad_logits):
        """Parameter gradients (same nesting as ``params``) for upstream ``grad_logits``."""
        grads = [None] * len(self.params)
        g = grad_logits
        for i in range(len(self.spec.layers) - 1, -1, -1):
            layer, ps, cache = self.spec.layers[i], self.params[i], caches[i]
            if self._normalize[i]:
                g = normalize_backward(cache[2], g)
            first = i == 0
            if layer.kind == "tconv":
                dk, g = tensor_conv_backward(ps[0], cache[0], g, layer.window, layer.stride, need_input=not first)
                grads[i] = [dk]
            elif layer.kind == "conv":
                dw, db, g = baseline_conv_backward(
                    ps[0], cache[0], cache[1], g, layer.stride, layer.activation, need_input=not first
                )
                grads[i] = [dw, db]
            elif layer.kind == "flatten":
                g = flatten_backward(g, cache[0])
                grads[i] = []
            else:
                dw, db, g = dense_backward(ps[0], cache[0], cache[1], g, layer.activation)
                grads[i] = [dw, db]
        return grads

    def logits(self, x, batch_size=500):
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        out = [self.forward(x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.spec.num_classes), self.dtype)

    def loss_and_grads(self, x, labels, workers=1):
        """Mean cross-entropy over the batch, its gradients and the logits.

        With ``workers > 1`` the batch is split into contiguous chunks run on a
        thread pool; chunk results are always combined in chunk order.
        """
        from .training import cross_entropy_batch

        x = np.asarray(x, dtype=self.dtype)
        labels = np.asarray(labels)
        n = len(x)
        bounds = np.linspace(0, n, min(max(1, workers), n) + 1).astype(int)

        def run(lo, hi):
            logits, caches = self.forward(x[lo:hi])
            losses, glogits = cross_entropy_batch(logits, labels[lo:hi])
            return losses.sum(), logits, self.backward(caches, glogits)

        spans = list(zip(bounds[:-1], bounds[1:]))
        if len(spans) == 1:
            parts = [run(*spans[0])]
        else:
            with ThreadPoolExecutor(len(spans)) as pool:
                parts = list(pool.map(lambda s: run(*s), spans))
        loss = sum(p[0] for p in parts) / n
        grads = [[np.zeros_like(p) for p in ps] for ps in self.params]
        for _, _, part in parts:
            for gs, ps in zip(grads, part):
                for acc, g in zip(gs, ps):
                    acc += g
        for gs in grads:
            for acc in gs:
                acc /= n
        return float(loss), np.concatenate([p[1] for p in parts]), grads


def model_forward(model, image):
    """Logits for a single ``(C, H, W)`` image (or a batch)."""
    logits, _ = model.forward(image)
    return logits[0] if np.asarray(image).ndim == 3 else logits
