from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Conv2D, Dense, Layer, ShapeError, Softmax

_TINY = 1e-12


@dataclass
class Tape:
    """Activation record of one forward pass, consumed by ``Network.backward``."""

    net_id: int
    caches: list
    output: np.ndarray
    train: bool
    layer_count: int = field(default=0)


class Network:
    """A sequential stack of layers ending in softmax.

    ``input_shape`` is (C, H, W) or (features,); batches carry a leading
    axis. Single-channel images may also be passed channels-last, (B, H, W, 1).
    """

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], name: str = "", dtype=np.float32):
        if not layers:
            raise ValueError("a network needs at least one layer")
        for i, layer in enumerate(layers):
            if isinstance(layer, Softmax) and i != len(layers) - 1:
                raise ValueError(f"layer {i}: softmax is only allowed as the final layer")
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.name = name
        self.dtype = np.dtype(dtype)
        self.shapes = [self.input_shape]
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
            self.shapes.append(shape)

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.shapes[-1]))

    @property
    def ends_in_softmax(self) -> bool:
        return isinstance(self.layers[-1], Softmax)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in layer order (weight before bias); updates in place are visible."""
        return [p for layer in self.layers for p in layer.params.values()]

    def param_names(self) -> list[str]:
        return [f"{i}.{layer.kind}.{k}" for i, layer in enumerate(self.layers) for k in layer.params]

    def _as_batch(self, x) -> np.ndarray:
        x = np.asarray(x)
        shape = self.input_shape
        if x.shape == shape:
            x = x[None]
        elif len(shape) == 3 and shape[0] == 1 and x.shape[1:] in ((shape[1], shape[2], 1), (shape[1], shape[2])):
            x = x.reshape((len(x),) + shape)
        elif len(shape) == 3 and shape[0] == 1 and x.shape in ((shape[1], shape[2], 1), (shape[1], shape[2])):
            x = x.reshape((1,) + shape)
        if x.shape[1:] != shape:
            raise ShapeError(f"layer 0 ({self.layers[0].kind}): input shape {x.shape[1:]} != expected {shape}")
        return x.astype(self.dtype, copy=False)

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> tuple[np.ndarray, Tape]:
        x = self._as_batch(x)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, train=train, rng=rng)
            caches.append(cache)
        return x, Tape(id(self), caches, x, train, len(self.layers))

    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Inference-mode outputs without retaining activations."""
        x = self._as_batch(x)
        out = []
        for start in range(0, len(x), batch_size):
            h = x[start : start + batch_size]
            for layer in self.layers:
                h, _ = layer.forward(h)
            out.append(h)
        return np.concatenate(out) if out else np.zeros((0, self.output_dim), dtype=self.dtype)

    def backward(self, tape: Tape, target: np.ndarray) -> list[np.ndarray]:
        """Gradients of the batch-mean categorical cross-entropy w.r.t. ``params()``.

        The softmax and cross-entropy are differentiated together, so the
        gradient entering the last pre-softmax layer is (p - target) / batch.
        """
        if tape.net_id != id(self) or tape.layer_count != len(self.layers):
            raise ValueError("tape was recorded on a different network")
        if not self.ends_in_softmax:
            raise ValueError("cross-entropy backward needs a softmax output layer")
        target = np.asarray(target, dtype=self.dtype).reshape(tape.output.shape)
        dy = (tape.output - target) / self.dtype.type(len(target))
        return self.backward_from(tape, dy, start=len(self.layers) - 2)

    def backward_from(self, tape: Tape, dy: np.ndarray, start: int | None = None) -> list[np.ndarray]:
        """Backpropagate ``dy`` given as the gradient w.r.t. the output of layer ``start``."""
        if start is None:
            start = len(self.layers) - 1
        grads: list[list[np.ndarray]] = [[np.zeros_like(p) for p in layer.params.values()] for layer in self.layers]
        for i in range(start, -1, -1):
            layer = self.layers[i]
            dy, g = layer.backward(dy, tape.caches[i], need_dx=i > 0)
            grads[i] = [g[k] for k in layer.params]
        return [g for per_layer in grads for g in per_layer]

    def loss(self, probs: np.ndarray, target: np.ndarray) -> float:
        return cross_entropy(probs, target)

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params()]

    def set_params(self, values: list[np.ndarray]) -> None:
        params = self.params()
        if len(values) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(values)}")
        for i, (p, v) in enumerate(zip(params, values)):
            if p.shape != v.shape:
                raise ShapeError(f"{self.param_names()[i]}: shape {v.shape} != {p.shape}")
            p[...] = v

    def __repr__(self):
        inner = ", ".join(repr(layer) for layer in self.layers)
        return f"Network({self.name!r}, input={self.input_shape}, [{inner}])"


def cross_entropy(probs: np.ndarray, target: np.ndarray) -> float:
    """Batch-mean of -sum_k t_k log p_k, accumulated in float64."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64).reshape(p.shape)
    if p.ndim == 1:
        p, t = p[None], t[None]
    return float(-(t * np.log(np.maximum(p, _TINY))).sum() / len(p))


def one_hot(labels, dim: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), dim), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def count_params(net: Network) -> int:
    total = 0
    for layer in net.layers:
        if isinstance(layer, Conv2D):
            total += 9 * layer.in_channels * layer.out_channels + layer.out_channels
        elif isinstance(layer, Dense):
            total += layer.in_features * layer.out_features + layer.out_features
    return total


def init_params(net: Network, rng: np.random.Generator) -> None:
    """He-uniform for layers feeding ReLU, Glorot-uniform for the final dense; zero biases."""
    trainable = [layer for layer in net.layers if isinstance(layer, (Conv2D, Dense))]
    for layer in trainable:
        w = layer.params["weight"]
        if isinstance(layer, Conv2D):
            fan_in, fan_out = 9 * layer.in_channels, 9 * layer.out_channels
        else:
            fan_in, fan_out = layer.in_features, layer.out_features
        if layer is trainable[-1] and isinstance(layer, Dense):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        else:
            limit = np.sqrt(6.0 / fan_in)
        w[...] = rng.uniform(-limit, limit, size=w.shape)
        layer.params["bias"][...] = 0
