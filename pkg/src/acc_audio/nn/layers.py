"""Layer kinds for channels-first feature maps with analytic backward passes.

Each layer is stateless during a pass: ``forward`` returns the output and a
cache, ``backward`` consumes that cache. That keeps a built network
read-only at inference time, so it can be shared between threads.
"""

from __future__ import annotations

import numpy as np

from . import kernels

KERNEL = 3
POOL_STRIDE = 2


class ShapeError(ValueError):
    pass


class Layer:
    kind = ""
    params: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def forward(self, x: np.ndarray, train: bool = False, rng=None):
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache, need_dx: bool = True):
        """Return (dx, grads) where grads maps parameter names to arrays."""
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items() if k != "kind")
        return f"{self.kind}({args})"


class Conv2D(Layer):
    """3x3 convolution, stride 1, zero 'same' padding.

    Weights are (out, in, 3, 3); feature maps are (batch, channels, rows, cols).
    """

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.params = {
            "weight": np.zeros((out_channels, in_channels, KERNEL, KERNEL), dtype=dtype),
            "bias": np.zeros(out_channels, dtype=dtype),
        }

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ShapeError(f"expects ({self.in_channels}, H, W), got {shape}")
        return (self.out_channels, shape[1], shape[2])

    def forward(self, x, train=False, rng=None):
        b, _, h, w = x.shape
        weight = self.params["weight"]
        xp = np.pad(x.astype(weight.dtype, copy=False), ((0, 0), (0, 0), (1, 1), (1, 1)))
        y = np.empty((b, self.out_channels, h, w), dtype=weight.dtype)
        kernels.conv3x3(xp, weight, self.params["bias"], y)
        return y, xp

    def backward(self, dy, cache, need_dx=True):
        xp = cache
        weight = self.params["weight"]
        dy = np.ascontiguousarray(dy, dtype=weight.dtype)
        b, _, h, w = dy.shape
        grads = {"weight": _conv_weight_grad(xp, dy), "bias": dy.sum(axis=(0, 2, 3), dtype=np.float64).astype(weight.dtype)}
        if not need_dx:
            return None, grads
        dyp = np.pad(dy, ((0, 0), (0, 0), (1, 1), (1, 1)))
        dx = np.empty((b, self.in_channels, h, w), dtype=weight.dtype)
        kernels.conv3x3(dyp, kernels.flip_for_input_grad(weight), np.zeros(self.in_channels, weight.dtype), dx)
        return dx, grads

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "out_channels": self.out_channels}


def _conv_weight_grad(xp: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Correlate the padded input with the output gradient, one GEMM per tap.

    Padding each gradient row with two zero columns gives it the padded
    input's row pitch, so tap (i, j) becomes a constant offset into the
    flattened input plane and each tap is a strided matrix product.
    """
    b, c, hp, wp = xp.shape
    o, h = dy.shape[1], dy.shape[2]
    span = h * wp - 2
    flat = xp.reshape(b, c, hp * wp)
    dyq = np.pad(dy, ((0, 0), (0, 0), (0, 0), (0, 2))).reshape(b, o, h * wp)[:, :, :span]
    grad = np.empty((o, c, KERNEL, KERNEL), dtype=dy.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            off = i * wp + j
            taps = flat[:, :, off : off + span].transpose(0, 2, 1)
            grad[:, :, i, j] = np.matmul(dyq, taps).sum(axis=0, dtype=np.float64)
    return grad


def pool_output_size(n: int, padding: str) -> int:
    if padding == "same":
        return -(-n // POOL_STRIDE)
    if padding == "valid":
        if n < KERNEL:
            raise ShapeError(f"valid pooling needs extent >= {KERNEL}, got {n}")
        return (n - KERNEL) // POOL_STRIDE + 1
    raise ValueError(f"unknown pool padding {padding!r}")


class MaxPool2D(Layer):
    """3x3 max pooling with stride 2.

    ``padding="same"`` maps extent n to ceil(n / 2), padding with -inf split
    evenly around the map (any odd cell goes at the end); ``"valid"`` maps n
    to floor((n - 3) / 2) + 1.
    """

    kind = "maxpool2d"

    def __init__(self, padding: str = "same"):
        super().__init__()
        pool_output_size(KERNEL, padding)
        self.padding = padding

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"expects (C, H, W), got {shape}")
        return (shape[0], pool_output_size(shape[1], self.padding), pool_output_size(shape[2], self.padding))

    def _pads(self, n):
        out = pool_output_size(n, self.padding)
        total = max((out - 1) * POOL_STRIDE + KERNEL - n, 0)
        return out, total // 2, total - total // 2

    def forward(self, x, train=False, rng=None):
        b, c, h, w = x.shape
        oh, top, bottom = self._pads(h)
        ow, left, right = self._pads(w)
        xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)), constant_values=-np.inf)
        y = np.empty((b, c, oh, ow), dtype=x.dtype)
        arg = np.empty((b, c, oh, ow), dtype=np.int8)
        kernels.maxpool3x3s2(xp, y, arg)
        return y, (arg, xp.shape, (top, left), (h, w))

    def backward(self, dy, cache, need_dx=True):
        if not need_dx:
            return None, {}
        arg, padded_shape, (top, left), (h, w) = cache
        dxp = np.zeros(padded_shape, dtype=dy.dtype)
        kernels.maxpool3x3s2_grad(np.ascontiguousarray(dy), arg, dxp)
        return dxp[:, :, top : top + h, left : left + w], {}

    def config(self):
        return {"kind": self.kind, "padding": self.padding}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "weight": np.zeros((in_features, out_features), dtype=dtype),
            "bias": np.zeros(out_features, dtype=dtype),
        }

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeError(f"expects ({self.in_features},), got {shape}")
        return (self.out_features,)

    def forward(self, x, train=False, rng=None):
        return x @ self.params["weight"] + self.params["bias"], x

    def backward(self, dy, cache, need_dx=True):
        x = cache
        grads = {"weight": x.T @ dy, "bias": dy.sum(axis=0, dtype=np.float64).astype(dy.dtype)}
        dx = dy @ self.params["weight"].T if need_dx else None
        return dx, grads

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features, "out_features": self.out_features}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache, need_dx=True):
        return (dy * cache if need_dx else None), {}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        z = x.astype(np.float64)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        p = p.astype(x.dtype)
        return p, p

    def backward(self, dy, cache, need_dx=True):
        p = cache
        dx = p * (dy - (dy * p).sum(axis=-1, keepdims=True))
        return (dx if need_dx else None), {}


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/keep during training."""

    kind = "dropout"

    def __init__(self, keep: float):
        super().__init__()
        if not 0.0 < keep <= 1.0:
            raise ValueError(f"keep probability must be in (0, 1], got {keep}")
        self.keep = keep

    def forward(self, x, train=False, rng=None):
        if not train or self.keep == 1.0:
            return x, None
        if rng is None:
            raise ValueError("dropout in train mode needs a random generator")
        mask = (rng.random(x.shape) < self.keep).astype(x.dtype) / x.dtype.type(self.keep)
        return x * mask, mask

    def backward(self, dy, cache, need_dx=True):
        if not need_dx:
            return None, {}
        return (dy if cache is None else dy * cache), {}

    def config(self):
        return {"kind": self.kind, "keep": self.keep}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, need_dx=True):
        return (dy.reshape(cache) if need_dx else None), {}


LAYER_KINDS = {cls.kind: cls for cls in (Conv2D, MaxPool2D, Dense, ReLU, Softmax, Dropout, Flatten)}


def layer_from_config(cfg: dict, dtype=np.float32) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    cls = LAYER_KINDS.get(kind)
    if cls is None:
        raise ValueError(f"unknown layer kind {kind!r}")
    if cls in (Conv2D, Dense):
        return cls(**cfg, dtype=dtype)
    return cls(**cfg)
