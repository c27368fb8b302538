"""Conditional (CLNN) and masked conditional (MCLNN) networks in numpy.

A conditional layer of order ``n`` holds ``2n + 1`` weight matrices, one per
frame offset ``u`` in ``[-n, n]``. For every frame ``t`` that has ``n``
neighbours on both sides it emits

    y_t = prelu(b + sum_u x_{t+u} @ Z_u),    Z_u = W_u * mask

so a layer consumes ``2n`` frames. A stack of ``m`` layers fed a segment of
``2nm + k`` frames leaves ``k`` frames, which are mean-pooled over time and
classified by PReLU dense layers and a softmax output.

Weight tensors are stored with axis 0 running over ``u = -n .. n``.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .masks import MaskSpec, apply_mask, build_mask

__all__ = [
    "ConditionalLayerParams",
    "DenseParams",
    "ModelParams",
    "Segment",
    "window_width",
    "segment_width",
    "prelu",
    "clnn_layer_forward",
    "global_mean_pool",
    "softmax",
    "init_params",
    "forward_batch",
    "model_forward",
    "loss_and_gradients",
    "model_gradients",
    "parameter_count",
    "save_model",
    "load_model",
    "MODEL_MAGIC",
]

PRELU_INIT = 0.25
MODEL_MAGIC = b"MCLNN1\n"


def window_width(n: int) -> int:
    """Number of frames a conditional layer of order ``n`` looks at."""
    if n < 1:
        raise ValueError(f"order must be >= 1, got {n}")
    return 2 * n + 1


def segment_width(n: int, m: int, k: int) -> int:
    """Frames needed so ``m`` layers of order ``n`` leave ``k`` frames."""
    if n < 1 or m < 1 or k < 1:
        raise ValueError(f"order, layer count and extra frames must be >= 1, got n={n}, m={m}, k={k}")
    return 2 * n * m + k


@dataclass
class ConditionalLayerParams:
    weights: np.ndarray  # (2n+1, l_in, e)
    bias: np.ndarray  # (e,)
    slopes: np.ndarray  # (e,)
    mask: np.ndarray | None = None  # (l_in, e)
    mask_spec: MaskSpec | None = None

    def __post_init__(self):
        if self.weights.ndim != 3 or self.weights.shape[0] % 2 == 0 or self.weights.shape[0] < 3:
            raise ValueError(f"weights must have shape (2n+1, l, e) with n >= 1, got {self.weights.shape}")
        e = self.weights.shape[2]
        if self.bias.shape != (e,) or self.slopes.shape != (e,):
            raise ValueError(f"bias and slopes must have shape ({e},)")
        if self.mask is not None and self.mask.shape != self.weights.shape[1:]:
            raise ValueError(f"mask shape {self.mask.shape} does not match weights {self.weights.shape[1:]}")
        if not (np.all(np.isfinite(self.bias)) and np.all(np.isfinite(self.slopes))):
            raise ValueError("bias and PReLU slopes must be finite")

    @property
    def order(self) -> int:
        return (self.weights.shape[0] - 1) // 2

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[2]

    def effective_weights(self) -> np.ndarray:
        if self.mask is None:
            return self.weights
        return apply_mask(self.weights, self.mask)


@dataclass
class DenseParams:
    weights: np.ndarray  # (n_in, n_out)
    bias: np.ndarray
    slopes: np.ndarray | None = None  # None for the softmax output layer


@dataclass
class ModelParams:
    clnn_layers: list[ConditionalLayerParams]
    dense_layers: list[DenseParams]
    output_layer: DenseParams
    k: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.clnn_layers:
            raise ValueError("at least one conditional layer is required")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        orders = {layer.order for layer in self.clnn_layers}
        if len(orders) != 1:
            raise ValueError(f"all conditional layers must share one order, got {sorted(orders)}")
        width = self.clnn_layers[0].n_in
        for i, layer in enumerate(self.clnn_layers):
            if layer.n_in != width:
                raise ValueError(f"conditional layer {i} expects {layer.n_in} inputs, previous layer gives {width}")
            width = layer.n_out
        for i, layer in enumerate([*self.dense_layers, self.output_layer]):
            if layer.weights.shape[0] != width:
                raise ValueError(f"dense layer {i} expects {layer.weights.shape[0]} inputs, got {width}")
            width = layer.weights.shape[1]
        if self.labels and len(self.labels) != width:
            raise ValueError(f"{len(self.labels)} labels for {width} output units")

    @property
    def order(self) -> int:
        return self.clnn_layers[0].order

    @property
    def n_features(self) -> int:
        return self.clnn_layers[0].n_in

    @property
    def n_classes(self) -> int:
        return self.output_layer.weights.shape[1]

    @property
    def segment_width(self) -> int:
        return segment_width(self.order, len(self.clnn_layers), self.k)

    @property
    def dtype(self):
        return self.clnn_layers[0].weights.dtype

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in canonical (file and optimizer) order."""
        out = []
        for layer in self.clnn_layers:
            out += [layer.weights, layer.bias, layer.slopes]
        for layer in self.dense_layers:
            out += [layer.weights, layer.bias, layer.slopes]
        out += [self.output_layer.weights, self.output_layer.bias]
        return out

    def array_names(self) -> list[str]:
        names = []
        for i in range(len(self.clnn_layers)):
            names += [f"clnn{i}.weights", f"clnn{i}.bias", f"clnn{i}.slopes"]
        for i in range(len(self.dense_layers)):
            names += [f"dense{i}.weights", f"dense{i}.bias", f"dense{i}.slopes"]
        return names + ["output.weights", "output.bias"]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "ModelParams":
        """Copy of the model structure holding ``arrays`` instead."""
        expected = 3 * (len(self.clnn_layers) + len(self.dense_layers)) + 2
        if len(arrays) != expected:
            raise ValueError(f"model structure holds {expected} arrays, got {len(arrays)}")
        it = iter(arrays)
        clnn = [replace(layer, weights=next(it), bias=next(it), slopes=next(it)) for layer in self.clnn_layers]
        dense = [replace(layer, weights=next(it), bias=next(it), slopes=next(it)) for layer in self.dense_layers]
        output = replace(self.output_layer, weights=next(it), bias=next(it))
        return ModelParams(clnn, dense, output, self.k, self.labels)

    def astype(self, dtype) -> "ModelParams":
        return self.with_arrays([a.astype(dtype) for a in self.arrays()])


@dataclass
class Segment:
    frames: np.ndarray  # (q, l)
    clip_id: str = ""
    start: int = 0


def prelu(x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """Identity for positive entries, ``slope * x`` elsewhere (per last axis)."""
    x = np.asarray(x)
    slopes = np.asarray(slopes)
    if x.shape[-1] != slopes.shape[-1]:
        raise ValueError(f"got {x.shape[-1]} activations but {slopes.shape[-1]} slopes")
    return np.where(x > 0, x, slopes * x)


def global_mean_pool(frames: np.ndarray) -> np.ndarray:
    """Average over the frame axis (second to last)."""
    frames = np.asarray(frames)
    if frames.shape[-2] == 0:
        raise ValueError("cannot pool zero frames")
    return frames.mean(axis=-2)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def _windows(x: np.ndarray, d: int) -> np.ndarray:
    """(B, p, l) -> (B, p-d+1, d*l) with row layout [u, i]."""
    B, p, l = x.shape
    win = sliding_window_view(x, d, axis=1)  # (B, T, l, d)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B, p - d + 1, d * l)


def _clnn_preactivation(x: np.ndarray, layer: ConditionalLayerParams):
    d = layer.weights.shape[0]
    if x.shape[-1] != layer.n_in:
        raise ValueError(f"input has {x.shape[-1]} features, layer expects {layer.n_in}")
    if x.shape[1] < d:
        raise ValueError(f"need at least {d} frames for order {layer.order}, got {x.shape[1]}")
    win = _windows(x, d)
    flat_w = layer.effective_weights().reshape(d * layer.n_in, layer.n_out)
    return win @ flat_w + layer.bias, win


def clnn_layer_forward(x: np.ndarray, params: ConditionalLayerParams) -> np.ndarray:
    """Apply one conditional layer to a ``(p, l_in)`` frame matrix.

    Accepts a leading batch axis as well. Returns ``p - 2n`` frames.
    """
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    z, _ = _clnn_preactivation(x, params)
    y = prelu(z, params.slopes)
    return y[0] if single else y


def _dropout_mask(rng: np.random.Generator, shape, rate: float, dtype) -> np.ndarray:
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def _as_rng(seed) -> np.random.Generator | None:
    if seed is None or isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def forward_batch(
    params: ModelParams,
    x: np.ndarray,
    train_mode: bool = False,
    dropout_rng=None,
    dropout_rate: float = 0.5,
    keep_cache: bool = False,
):
    """Class probabilities for a batch of segments ``x`` of shape ``(B, q, l)``.

    With ``keep_cache`` the intermediate values needed by the backward pass
    are returned alongside the probabilities.
    """
    x = np.asarray(x, dtype=params.dtype)
    if x.ndim != 3:
        raise ValueError(f"expected a (batch, frames, features) array, got shape {x.shape}")
    if x.shape[1] != params.segment_width:
        raise ValueError(f"segment has {x.shape[1]} frames, model expects {params.segment_width}")
    use_dropout = train_mode and dropout_rate > 0
    rng = _as_rng(dropout_rng) if use_dropout else None
    if use_dropout and rng is None:
        raise ValueError("train_mode with dropout needs a dropout_rng seed")

    cache = {"clnn": [], "dense": []}
    h = x
    for layer in params.clnn_layers:
        z, win = _clnn_preactivation(h, layer)
        if keep_cache:
            cache["clnn"].append((win, z))
        h = prelu(z, layer.slopes)
    h = global_mean_pool(h)
    cache["pooled_frames"] = params.k
    for layer in params.dense_layers:
        a = h
        z = a @ layer.weights + layer.bias
        h = prelu(z, layer.slopes)
        drop = _dropout_mask(rng, h.shape, dropout_rate, h.dtype) if use_dropout else None
        if drop is not None:
            h = h * drop
        if keep_cache:
            cache["dense"].append((a, z, drop))
    cache["last_hidden"] = h
    logits = h @ params.output_layer.weights + params.output_layer.bias
    probs = softmax(logits)
    return (probs, cache) if keep_cache else probs


def model_forward(
    segment,
    params: ModelParams,
    train_mode: bool = False,
    dropout_rng=None,
    dropout_rate: float = 0.5,
) -> np.ndarray:
    """Class probability vector for one segment (a ``Segment`` or ``(q, l)`` array)."""
    frames = segment.frames if isinstance(segment, Segment) else segment
    return forward_batch(params, np.asarray(frames)[None], train_mode, dropout_rng, dropout_rate)[0]


def _prelu_backward(z, slopes, grad_out):
    positive = z > 0
    grad_in = np.where(positive, grad_out, slopes * grad_out)
    reduce_axes = tuple(range(z.ndim - 1))
    grad_slopes = np.where(positive, 0.0, z * grad_out).sum(axis=reduce_axes)
    return grad_in, grad_slopes


def loss_and_gradients(
    params: ModelParams,
    x: np.ndarray,
    labels: np.ndarray,
    dropout_rng=None,
    dropout_rate: float = 0.5,
):
    """Mean cross-entropy over the batch and its gradient w.r.t. every trainable array.

    Returns ``(loss, grads)`` where ``grads`` is a ``ModelParams`` of the same
    structure. Dropout is active whenever ``dropout_rate > 0``.
    """
    labels = np.asarray(labels)
    B = labels.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= params.n_classes:
        raise ValueError(f"labels must lie in [0, {params.n_classes - 1}]")
    probs, cache = forward_batch(params, x, dropout_rate > 0, dropout_rng, dropout_rate, keep_cache=True)
    rows = np.arange(B)
    loss = float(np.mean(-np.log(np.maximum(probs[rows, labels], 1e-12))))

    g = probs.copy()
    g[rows, labels] -= 1.0
    g /= B
    h = cache["last_hidden"]
    out = params.output_layer
    grad_output = DenseParams(h.T @ g, g.sum(axis=0))
    g = g @ out.weights.T

    grad_dense = []
    for layer, (a, z, drop) in zip(reversed(params.dense_layers), reversed(cache["dense"])):
        if drop is not None:
            g = g * drop
        g, gs = _prelu_backward(z, layer.slopes, g)
        grad_dense.append(DenseParams(a.T @ g, g.sum(axis=0), gs))
        g = g @ layer.weights.T
    grad_dense.reverse()

    # undo the mean pool: every remaining frame gets an equal share
    k = cache["pooled_frames"]
    g = np.repeat(g[:, None, :] / k, k, axis=1)

    grad_clnn = []
    for layer, (win, z) in zip(reversed(params.clnn_layers), reversed(cache["clnn"])):
        g, gs = _prelu_backward(z, layer.slopes, g)
        d, l_in, e = layer.weights.shape
        gw = win.reshape(-1, d * l_in).T @ g.reshape(-1, e)
        gw = gw.reshape(d, l_in, e)
        if layer.mask is not None:
            gw = apply_mask(gw, layer.mask)
        grad_layer = replace(layer, weights=gw, bias=g.sum(axis=(0, 1)), slopes=gs)
        if layer is not params.clnn_layers[0]:
            gwin = (g @ layer.effective_weights().reshape(d * l_in, e).T).reshape(g.shape[0], g.shape[1], d, l_in)
            T = g.shape[1]
            gx = np.zeros((g.shape[0], T + d - 1, l_in), dtype=g.dtype)
            for u in range(d):
                gx[:, u:u + T] += gwin[:, :, u]
            g = gx
        grad_clnn.append(grad_layer)
    grad_clnn.reverse()

    grads = ModelParams(grad_clnn, grad_dense, grad_output, params.k, params.labels)
    return loss, grads


def model_gradients(batch, params: ModelParams, dropout_rng=None, dropout_rate: float = 0.5):
    """Gradients for a list of ``(segment, label)`` pairs.

    Returns ``(grads, mean_loss)``.
    """
    if not batch:
        raise ValueError("empty batch")
    frames = np.stack([s.frames if isinstance(s, Segment) else np.asarray(s) for s, _ in batch])
    labels = np.array([label for _, label in batch])
    loss, grads = loss_and_gradients(params, frames, labels, dropout_rng, dropout_rate)
    return grads, loss


def _uniform(rng, shape, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(
    n_features: int,
    layers: Sequence[tuple[int, MaskSpec | None]],
    order: int,
    k: int,
    dense_widths: Sequence[int],
    n_classes: int,
    rng,
    dtype=np.float64,
    labels: Sequence[str] = (),
) -> ModelParams:
    """Randomly initialised model.

    ``layers`` lists ``(width, mask_spec)`` per conditional layer; a mask spec
    of ``None`` gives a plain CLNN layer. Weights are uniform in
    ``+-sqrt(6 / (fan_in + fan_out))`` where a conditional layer's fan-in is
    the whole window, ``(2n+1) * l_in``. Masked positions start at zero.
    """
    rng = _as_rng(rng)
    d = window_width(order)
    clnn = []
    width = n_features
    for e, spec in layers:
        w = _uniform(rng, (d, width, e), d * width, e, dtype)
        mask = None
        if spec is not None:
            mask = build_mask(width, e, spec).astype(dtype)
            w = apply_mask(w, mask)
        clnn.append(ConditionalLayerParams(
            w, np.zeros(e, dtype), np.full(e, PRELU_INIT, dtype), mask, spec))
        width = e
    dense = []
    for e in dense_widths:
        dense.append(DenseParams(
            _uniform(rng, (width, e), width, e, dtype), np.zeros(e, dtype), np.full(e, PRELU_INIT, dtype)))
        width = e
    output = DenseParams(_uniform(rng, (width, n_classes), width, n_classes, dtype), np.zeros(n_classes, dtype))
    return ModelParams(clnn, dense, output, k, tuple(labels))


def parameter_count(config, n_classes: int | None = None, include_slopes: bool = False) -> int:
    """Trainable scalars of the model described by ``config``.

    ``config`` needs ``feature_length``, ``order``, ``layers`` (items with a
    ``width``), ``dense_widths`` and, unless ``n_classes`` is given,
    ``classes``. PReLU slopes are only counted with ``include_slopes``.
    """
    if n_classes is None:
        n_classes = len(config.classes)
    d = window_width(config.order)
    total = 0
    width = config.feature_length
    for layer in config.layers:
        total += d * width * layer.width + layer.width
        if include_slopes:
            total += layer.width
        width = layer.width
    for e in config.dense_widths:
        total += width * e + e
        if include_slopes:
            total += e
        width = e
    return total + width * n_classes + n_classes


# ---------------------------------------------------------------------------
# model files

def _header(params: ModelParams, standardizer=None) -> dict:
    layers = []
    for layer in params.clnn_layers:
        spec = layer.mask_spec
        if spec is None and layer.mask is not None:
            raise ValueError("masked layer without a MaskSpec cannot be serialised")
        layers.append({
            "kind": "mclnn" if spec is not None else "clnn",
            "order": layer.order,
            "inputs": layer.n_in,
            "width": layer.n_out,
            "mask": None if spec is None else {"bandwidth": spec.bandwidth, "overlap": spec.overlap},
            "arrays": [
                {"name": "weights", "shape": list(layer.weights.shape)},
                {"name": "bias", "shape": [layer.n_out]},
                {"name": "slopes", "shape": [layer.n_out]},
            ],
        })
    for layer in params.dense_layers:
        n_in, n_out = layer.weights.shape
        layers.append({
            "kind": "dense", "inputs": n_in, "width": n_out,
            "arrays": [
                {"name": "weights", "shape": [n_in, n_out]},
                {"name": "bias", "shape": [n_out]},
                {"name": "slopes", "shape": [n_out]},
            ],
        })
    n_in, n_out = params.output_layer.weights.shape
    layers.append({
        "kind": "softmax", "inputs": n_in, "width": n_out,
        "arrays": [{"name": "weights", "shape": [n_in, n_out]}, {"name": "bias", "shape": [n_out]}],
    })
    header = {
        "order": params.order,
        "k": params.k,
        "segment_width": params.segment_width,
        "labels": list(params.labels),
        "layers": layers,
        "dtype": "<f4",
    }
    if standardizer is not None:
        f = len(standardizer.means)
        header["standardizer"] = {"arrays": [{"name": "means", "shape": [f]}, {"name": "stds", "shape": [f]}]}
    return header


def save_model(path, params: ModelParams, standardizer=None) -> None:
    """Write ``params`` (and optionally the feature standardizer) in MCLNN1 format.

    Layout: magic ``MCLNN1\\n``, little-endian uint32 header length, the UTF-8
    JSON header, then every array as little-endian float32 in header order.
    """
    header = json.dumps(_header(params, standardizer), separators=(",", ":")).encode("utf-8")
    arrays = params.arrays()
    if standardizer is not None:
        arrays = arrays + [np.asarray(standardizer.means), np.asarray(standardizer.stds)]
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_model(path, dtype=np.float64):
    """Read an MCLNN1 file. Returns ``(params, standardizer_arrays_or_None)``.

    The second item is a ``(means, stds)`` tuple when the file carries one.
    """
    data = Path(path).read_bytes()
    if not data.startswith(MODEL_MAGIC):
        raise ValueError(f"{path}: not an MCLNN1 model file")
    pos = len(MODEL_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt model header") from exc
    pos += hlen

    def take(shape):
        nonlocal pos
        count = int(np.prod(shape))
        if pos + 4 * count > len(data):
            raise ValueError(f"{path}: truncated parameter data")
        a = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(dtype)
        pos += 4 * count
        return a

    clnn, dense, output = [], [], None
    for spec in header["layers"]:
        arrays = [take(a["shape"]) for a in spec["arrays"]]
        if spec["kind"] in ("clnn", "mclnn"):
            mask_spec = mask = None
            if spec["mask"] is not None:
                mask_spec = MaskSpec(spec["mask"]["bandwidth"], spec["mask"]["overlap"])
                mask = build_mask(spec["inputs"], spec["width"], mask_spec).astype(dtype)
            clnn.append(ConditionalLayerParams(*arrays, mask=mask, mask_spec=mask_spec))
        elif spec["kind"] == "dense":
            dense.append(DenseParams(*arrays))
        elif spec["kind"] == "softmax":
            output = DenseParams(*arrays)
        else:
            raise ValueError(f"{path}: unknown layer kind {spec['kind']!r}")
    if output is None:
        raise ValueError(f"{path}: model has no output layer")
    standardizer = None
    if "standardizer" in header:
        standardizer = tuple(take(a["shape"]) for a in header["standardizer"]["arrays"])
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    params = ModelParams(clnn, dense, output, header["k"], tuple(header["labels"]))
    return params, standardizer
