"""Small dense networks on the tape substrate.

A network is a plain dict of float64 parameter arrays plus an
:class:`MlpSpec` describing the layer stack. Two forward paths exist and are
kept operation-for-operation identical so they produce the same bits:
``mlp_forward`` (plain numpy, used when no gradient is needed) and
``mlp_forward_nodes`` (tape nodes, used for training and energy gradients).

Checkpoints are a single binary file: magic, format version, a JSON metadata
blob, a shape table, then the raw little-endian float64 parameter data in
table order. Round trips are bit-exact.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .autodiff import as_grid


class CheckpointError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


TIME_EMBEDDING_DIM = 32


def time_embedding(t, dim=TIME_EMBEDDING_DIM):
    """Sinusoidal features of a scalar time, geometric frequencies 1..1000.

    Accepts a scalar (returns (dim,)) or a vector of times (returns (n, dim)).
    """
    if dim % 2 != 0:
        raise ValueError("embedding dimension must be even")
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), half))
    t = np.asarray(t, dtype=np.float64)
    phase = t[..., None] * freqs
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden: tuple
    out_dim: int

    def layer_dims(self):
        dims = [self.in_dim, *self.hidden, self.out_dim]
        return list(zip(dims[:-1], dims[1:]))


def init_mlp(spec, stream):
    """Gaussian fan-in init, deterministic in the stream."""
    params = {}
    for k, (n_in, n_out) in enumerate(spec.layer_dims()):
        params[f"W{k}"] = rng.gaussian(stream, (n_in, n_out)) / np.sqrt(n_in)
        params[f"b{k}"] = np.zeros(n_out)
    return params


def mlp_forward(spec, params, x):
    """Plain-numpy forward; tanh on every layer except the last."""
    h = np.asarray(x, dtype=np.float64)
    last = len(spec.hidden)
    for k in range(last + 1):
        h = h @ params[f"W{k}"] + params[f"b{k}"]
        if k < last:
            h = np.tanh(h)
    return h


def mlp_hidden_forward(spec, params, x):
    """Activations of the final hidden layer (the stack minus its last affine map)."""
    h = np.asarray(x, dtype=np.float64)
    for k in range(len(spec.hidden)):
        h = np.tanh(h @ params[f"W{k}"] + params[f"b{k}"])
    return h


def mlp_forward_nodes(tape, spec, param_nodes, x_node, upto_hidden=False):
    """Tape forward mirroring mlp_forward exactly (same op order, same bits)."""
    h = x_node
    last = len(spec.hidden)
    for k in range(last + 1):
        if upto_hidden and k == last:
            return h
        h = tape.bias(tape.matmul(h, param_nodes[f"W{k}"]), param_nodes[f"b{k}"])
        if k < last:
            h = tape.tanh(h)
    return h


def param_leaves(tape, params):
    return {name: tape.leaf(value, name) for name, value in params.items()}


@dataclass
class SgdMomentum:
    """Plain stochastic gradient descent with momentum; no adaptive state."""

    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: dict = field(default_factory=dict)

    def step(self, params, grads):
        for name, g in grads.items():
            if self.weight_decay > 0.0 and name.startswith("W"):
                g = g + self.weight_decay * params[name]
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            params[name] = params[name] - self.lr * v


# --- checkpoint format -------------------------------------------------------

_MAGIC = b"EGCKPT01"
_VERSION = 1


def save_checkpoint(path, kind, meta, params):
    """Write magic | version | json meta | shape table | raw float64 LE data."""
    meta = dict(meta, kind=kind)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    names = sorted(params)
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _VERSION)
    blob += struct.pack("<I", len(meta_bytes)) + meta_bytes
    blob += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype=np.float64)
        nb = name.encode("utf-8")
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype=np.float64)
        blob += arr.astype("<f8", copy=False).tobytes()
    _atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path):
    """Returns (kind, meta, params). Bit-exact inverse of save_checkpoint."""
    with open(path, "rb") as f:
        data = f.read()
    off = 0
    if data[:8] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    off = 8
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (meta_len,) = struct.unpack_from("<I", data, off)
    off += 4
    meta = json.loads(data[off : off + meta_len].decode("utf-8"))
    off += meta_len
    (n_params,) = struct.unpack_from("<I", data, off)
    off += 4
    table = []
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        table.append((name, tuple(int(s) for s in shape)))
    params = {}
    for name, shape in table:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        params[name] = as_grid(arr.copy(), name)
    kind = meta.pop("kind", "unknown")
    return kind, meta, params


def _atomic_write_bytes(path, blob):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-ckpt-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
