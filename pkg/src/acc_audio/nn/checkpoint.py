"""Weight checkpoints.

Layout (little-endian)::

    magic  b"ACCW"
    u16    format version
    u32    byte length of the JSON header
    bytes  JSON header: model id, input shape, layer table, metadata
    bytes  float32 tensors in ``Network.params()`` order

The JSON is written with sorted keys so equal networks give equal bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .layers import layer_from_config
from .network import Network

MAGIC = b"ACCW"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def dumps(net: Network, model_id: str, meta: dict | None = None) -> bytes:
    header = {
        "model_id": model_id,
        "input_shape": list(net.input_shape),
        "layers": [
            {"config": layer.config(), "tensors": [list(p.shape) for p in layer.params.values()]}
            for layer in net.layers
        ],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in net.params())
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + body


def save(path, net: Network, model_id: str, meta: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(dumps(net, model_id, meta))


def _parse(blob: bytes):
    if len(blob) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[_PREFIX.size : _PREFIX.size + hlen])
    offset = _PREFIX.size + hlen
    tensors = []
    for entry in header["layers"]:
        for shape in entry["tensors"]:
            n = int(np.prod(shape)) * 4
            if offset + n > len(blob):
                raise CheckpointError("checkpoint ends before all tensors were read")
            tensors.append(np.frombuffer(blob, dtype="<f4", count=n // 4, offset=offset).reshape(shape))
            offset += n
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after tensors")
    return header, tensors


def loads(blob: bytes) -> tuple[Network, str, dict]:
    header, tensors = _parse(blob)
    layers = [layer_from_config(entry["config"]) for entry in header["layers"]]
    net = Network(layers, tuple(header["input_shape"]), name=header["model_id"])
    net.set_params([t.astype(np.float32) for t in tensors])
    return net, header["model_id"], header["meta"]


def load(path) -> tuple[Network, str, dict]:
    with open(path, "rb") as f:
        return loads(f.read())


def load_into(net: Network, path) -> dict:
    """Copy checkpoint weights into an already-built network; returns metadata.

    The checkpoint's layer table must match ``net`` layer for layer.
    """
    with open(path, "rb") as f:
        header, tensors = _parse(f.read())
    if tuple(header["input_shape"]) != net.input_shape:
        raise CheckpointError(f"input shape {tuple(header['input_shape'])} != network input {net.input_shape}")
    if len(header["layers"]) != len(net.layers):
        raise CheckpointError(f"checkpoint has {len(header['layers'])} layers, network has {len(net.layers)}")
    for i, (entry, layer) in enumerate(zip(header["layers"], net.layers)):
        if entry["config"] != layer.config():
            raise CheckpointError(f"layer {i}: checkpoint {entry['config']} != configured {layer.config()}")
    net.set_params([t.astype(np.float32) for t in tensors])
    return header["meta"]
