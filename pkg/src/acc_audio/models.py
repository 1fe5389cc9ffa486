"""The action, pouring and shaking classifiers as configurable layer stacks."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace

import numpy as np

from .nn import Conv2D, Dense, Dropout, Flatten, MaxPool2D, Network, ReLU, Softmax, init_params

MODEL_IDS = ("action", "pouring", "shaking")

# (conv layers, pooling layers, dense layers, output classes) per model
STRUCTURE = {
    "action": (4, 2, 3, 3),
    "pouring": (6, 3, 3, 6),
    "shaking": (4, 2, 2, 4),
}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    id: str
    conv_channels: tuple[int, ...]
    fc_sizes: tuple[int, ...]
    dropout: float | None = None
    pool_padding: str = "same"

    @property
    def output_dim(self) -> int:
        return self.fc_sizes[-1]

    def validate(self) -> None:
        if self.id not in STRUCTURE:
            raise SpecError(f"unknown model id {self.id!r}")
        n_conv, _n_pool, n_fc, n_out = STRUCTURE[self.id]
        if len(self.conv_channels) != n_conv:
            raise SpecError(f"{self.id}: needs {n_conv} conv layers, got {len(self.conv_channels)}")
        if len(self.fc_sizes) != n_fc:
            raise SpecError(f"{self.id}: needs {n_fc} fully connected layers, got {len(self.fc_sizes)}")
        if self.fc_sizes[-1] != n_out:
            raise SpecError(f"{self.id}: output layer must have {n_out} units, got {self.fc_sizes[-1]}")
        if any(c < 1 for c in self.conv_channels) or any(f < 1 for f in self.fc_sizes):
            raise SpecError(f"{self.id}: layer widths must be positive")
        if self.id == "pouring" and self.dropout is None:
            raise SpecError("pouring: dropout keep probability is required")
        if self.dropout is not None and not 0.0 < self.dropout <= 1.0:
            raise SpecError(f"{self.id}: dropout keep probability {self.dropout} outside (0, 1]")


def default_config() -> dict[str, ModelSpec]:
    return {
        "action": ModelSpec("action", (32, 32, 64, 64), (256, 128, 3)),
        "pouring": ModelSpec("pouring", (32, 32, 64, 64, 128, 128), (256, 128, 6), dropout=0.75),
        "shaking": ModelSpec("shaking", (32, 32, 64, 64), (256, 4)),
    }


def build(spec: ModelSpec, n: int = 96, seed: int = 0, dtype=np.float32) -> Network:
    """Stack (conv, relu, conv, relu[, dropout], pool) blocks, flatten, dense layers, softmax."""
    spec.validate()
    if n < 12:
        raise SpecError(f"input side {n} is too small; need at least 12")
    layers = []
    in_ch = 1
    for i, out_ch in enumerate(spec.conv_channels):
        layers += [Conv2D(in_ch, out_ch, dtype=dtype), ReLU()]
        in_ch = out_ch
        if i % 2 == 1:
            if spec.dropout is not None:
                layers.append(Dropout(spec.dropout))
            layers.append(MaxPool2D(spec.pool_padding))
    layers.append(Flatten())
    net = Network(layers, (1, n, n), name=spec.id, dtype=dtype)
    features = net.shapes[-1][0]
    for j, width in enumerate(spec.fc_sizes):
        layers.append(Dense(features, width, dtype=dtype))
        layers.append(ReLU() if j < len(spec.fc_sizes) - 1 else Softmax())
        features = width
    net = Network(layers, (1, n, n), name=spec.id, dtype=dtype)
    init_params(net, np.random.default_rng(seed))
    return net


def layer_census(net: Network) -> dict[str, int]:
    counts: dict[str, int] = {}
    for layer in net.layers:
        counts[layer.kind] = counts.get(layer.kind, 0) + 1
    return counts


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def load_config(path=None, text: str | None = None) -> dict[str, ModelSpec]:
    """Read [action]/[pouring]/[shaking] sections from an INI file.

    Keys are ``conv_channels``, ``fc_sizes`` (comma-separated integers),
    ``dropout_keep`` and ``pool_padding``; absent sections or keys keep the
    defaults.
    """
    parser = configparser.ConfigParser()
    if text is not None:
        parser.read_string(text)
    elif path is not None:
        with open(path) as f:
            parser.read_file(f)
    return specs_from_parser(parser)


def specs_from_parser(parser: configparser.ConfigParser) -> dict[str, ModelSpec]:
    specs = default_config()
    for mid in MODEL_IDS:
        if not parser.has_section(mid):
            continue
        sec = parser[mid]
        spec = specs[mid]
        if "conv_channels" in sec:
            spec = replace(spec, conv_channels=_int_list(sec["conv_channels"]))
        if "fc_sizes" in sec:
            spec = replace(spec, fc_sizes=_int_list(sec["fc_sizes"]))
        if "dropout_keep" in sec:
            raw = sec["dropout_keep"].strip().lower()
            spec = replace(spec, dropout=None if raw in ("", "none") else float(raw))
        if "pool_padding" in sec:
            spec = replace(spec, pool_padding=sec["pool_padding"].strip())
        spec.validate()
        specs[mid] = spec
    return specs


def specs_to_ini(specs: dict[str, ModelSpec]) -> dict[str, dict[str, str]]:
    out = {}
    for mid in MODEL_IDS:
        s = specs[mid]
        out[mid] = {
            "conv_channels": ",".join(map(str, s.conv_channels)),
            "fc_sizes": ",".join(map(str, s.fc_sizes)),
            "dropout_keep": "none" if s.dropout is None else repr(s.dropout),
            "pool_padding": s.pool_padding,
        }
    return out
