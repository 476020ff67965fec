"""Model files.

Binary layout, all little-endian::

    b"LHMD" | u32 version | u32 kind | 32-byte feature digest | payload

Tree payload is ``u64 n_features, u64 n_nodes`` then five f64 arrays of
length n_nodes (feature, left, right, n_samples, n_positive). MLP payload is
``u64 seed, u64 n_sizes, u64 sizes[n_sizes]`` then each layer's weights
(row-major) followed by its biases, all f64. Integer fields stored as f64
are exact below 2**53.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .mlp import MlpModel
from .tree import DecisionTree

MAGIC = b"LHMD"
VERSION = 1
KIND_TREE, KIND_MLP = 1, 2
_HEADER = struct.Struct("<4sII32s")


class ModelFormatError(ValueError):
    pass


def feature_digest(tokens: Sequence[str] | None) -> bytes:
    """SHA-256 over the newline-joined feature names; zeros when unknown."""
    if tokens is None:
        return bytes(32)
    return hashlib.sha256("\n".join(tokens).encode("utf-8")).digest()


def _f64(values) -> bytes:
    return np.asarray(values, dtype="<f8").tobytes()


def dump_model(model, features: Sequence[str] | None = None) -> bytes:
    digest = feature_digest(features)
    if isinstance(model, DecisionTree):
        parts = [_HEADER.pack(MAGIC, VERSION, KIND_TREE, digest),
                 struct.pack("<QQ", model.n_features, model.node_count)]
        parts += [_f64(getattr(model, name)) for name in ("feature", "left", "right", "n_samples", "n_positive")]
    elif isinstance(model, MlpModel):
        sizes = model.layer_sizes
        parts = [_HEADER.pack(MAGIC, VERSION, KIND_MLP, digest),
                 struct.pack(f"<QQ{len(sizes)}Q", model.seed, len(sizes), *sizes)]
        for w, b in zip(model.weights, model.biases):
            parts += [_f64(w.ravel()), _f64(b)]
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("truncated model file")
        chunk = self.data[self.pos: self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)


def parse_model(data: bytes) -> tuple[DecisionTree | MlpModel, bytes]:
    """Returns (model, feature digest)."""
    r = _Reader(data)
    magic, version, kind, digest = r.unpack(_HEADER.format)
    if magic != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model file version {version}")
    if kind == KIND_TREE:
        n_features, n_nodes = r.unpack("<QQ")
        arrays = [r.floats(n_nodes).astype(np.int64) for _ in range(5)]
        model = DecisionTree(*arrays, n_features=int(n_features))
    elif kind == KIND_MLP:
        seed, n_sizes = r.unpack("<QQ")
        sizes = r.unpack(f"<{n_sizes}Q")
        ws, bs = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            ws.append(r.floats(a * b).reshape(a, b))
            bs.append(r.floats(b))
        model = MlpModel(tuple(sizes), tuple(ws), tuple(bs), int(seed))
    else:
        raise ModelFormatError(f"unknown model kind tag {kind}")
    if r.pos != len(data):
        raise ModelFormatError("trailing bytes after model payload")
    return model, digest


def save_model(model, path: str | Path, features: Sequence[str] | None = None) -> None:
    Path(path).write_bytes(dump_model(model, features))


def load_model(path: str | Path) -> tuple[DecisionTree | MlpModel, bytes]:
    return parse_model(Path(path).read_bytes())


def dump_model_text(model) -> str:
    """Line-per-parameter export using float.hex, so text diffs are exact."""
    if isinstance(model, DecisionTree):
        lines = [f"# leakhound-model v{VERSION} tree n_features={model.n_features} nodes={model.node_count}"]
        for i, node in enumerate(model.nodes):
            lines.append(f"node {i} feature={node.feature_index} left={node.left} right={node.right} "
                         f"n={node.n_samples} pos={int(model.n_positive[i])}")
    elif isinstance(model, MlpModel):
        lines = [f"# leakhound-model v{VERSION} mlp sizes={','.join(map(str, model.layer_sizes))} seed={model.seed}"]
        for k, (w, b) in enumerate(zip(model.weights, model.biases)):
            for (i, j), v in np.ndenumerate(w):
                lines.append(f"w {k} {i} {j} {float(v).hex()}")
            for j, v in enumerate(b):
                lines.append(f"b {k} {j} {float(v).hex()}")
    else:
        raise TypeError(f"cannot export {type(model).__name__}")
    return "\n".join(lines) + "\n"
