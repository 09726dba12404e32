"""Trainable graph encoder: a local/global two-branch transformer stack.

Each layer sums three terms — the residual stream, a local branch (two
linear maps over the node state and its degree-normalized neighbor mean),
and a global multi-head self-attention branch over all subgraph nodes —
then layer-normalizes and applies a 2x-width feed-forward block with a
second normalization. Node states are mean-pooled, projected to the text
dimension, and L2-normalized, so graph and summary embeddings live on the
same unit sphere.

Positional encodings are concatenated to the node features at the input
projection. Parameters live in a ``ParamStore`` of named float64 tensors,
each with one gradient slot.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError, ValidationError
from .graphs import EgoSubgraph
from .textenc import Embedding

CHECKPOINT_MAGIC = b"TAGSUMCK"
CHECKPOINT_VERSION = 1

# (layers, hidden) per published scale; heads chosen so hidden % heads == 0.
SCALE_PRESETS = {
    "small": (4, 512),
    "medium": (8, 768),
    "base": (12, 1024),
    "large": (16, 1024),
}


@dataclass(frozen=True)
class GraphEncoderConfig:
    layers: int
    hidden: int
    heads: int
    positional_dim: int
    text_dim: int

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.heads < 1:
            raise ValidationError("layers, hidden, and heads must be positive")
        if self.hidden % self.heads != 0:
            raise ValidationError(
                f"hidden {self.hidden} not divisible by heads {self.heads}"
            )
        if self.positional_dim < 1 or self.text_dim < 1:
            raise ValidationError("positional_dim and text_dim must be positive")


def preset_config(
    name: str, positional_dim: int = 16, text_dim: int = 384, heads: int = 8
) -> GraphEncoderConfig:
    """Named scale preset; layer count and hidden size are fixed per scale."""
    if name not in SCALE_PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(SCALE_PRESETS)}")
    layers, hidden = SCALE_PRESETS[name]
    return GraphEncoderConfig(
        layers=layers, hidden=hidden, heads=heads,
        positional_dim=positional_dim, text_dim=text_dim,
    )


def parameter_shapes(config: GraphEncoderConfig) -> dict[str, tuple[int, ...]]:
    """Named tensor shapes of the encoder, in deterministic order."""
    d, k, h = config.text_dim, config.positional_dim, config.hidden
    shapes: dict[str, tuple[int, ...]] = {
        "input.weight": (d + k, h),
        "input.bias": (h,),
    }
    for i in range(config.layers):
        prefix = f"layer{i}."
        shapes[prefix + "local_self.weight"] = (h, h)
        shapes[prefix + "local_self.bias"] = (h,)
        shapes[prefix + "local_neigh.weight"] = (h, h)
        shapes[prefix + "local_neigh.bias"] = (h,)
        for name in ("attn_q", "attn_k", "attn_v", "attn_out"):
            shapes[prefix + name + ".weight"] = (h, h)
            shapes[prefix + name + ".bias"] = (h,)
        shapes[prefix + "norm1.gain"] = (h,)
        shapes[prefix + "norm1.bias"] = (h,)
        shapes[prefix + "ffn1.weight"] = (h, 2 * h)
        shapes[prefix + "ffn1.bias"] = (2 * h,)
        shapes[prefix + "ffn2.weight"] = (2 * h, h)
        shapes[prefix + "ffn2.bias"] = (h,)
        shapes[prefix + "norm2.gain"] = (h,)
        shapes[prefix + "norm2.bias"] = (h,)
    shapes["proj.weight"] = (h, d)
    shapes["proj.bias"] = (d,)
    return shapes


def parameter_count(config: GraphEncoderConfig) -> int:
    """Graph-tower parameter count from shapes alone; nothing is allocated."""
    return sum(int(np.prod(shape)) for shape in parameter_shapes(config).values())


def sentence_encoder_parameter_count(
    vocab_size: int = 30522,
    hidden: int = 384,
    layers: int = 6,
    intermediate: int = 1536,
    max_positions: int = 512,
    type_vocab: int = 2,
) -> int:
    """Parameter count of the frozen 6-layer/384-hidden sentence encoder the
    projector targets, from shapes alone (BERT-style stack with pooler)."""
    embeddings = (vocab_size + max_positions + type_vocab) * hidden + 2 * hidden
    per_layer = (
        4 * (hidden * hidden + hidden)        # q, k, v, out
        + 2 * hidden                          # attention norm
        + hidden * intermediate + intermediate
        + intermediate * hidden + hidden
        + 2 * hidden                          # output norm
    )
    pooler = hidden * hidden + hidden
    return embeddings + layers * per_layer + pooler


def preset_total_parameter_count(name: str, **kwargs) -> int:
    """Graph tower plus frozen text tower, the published per-scale figure."""
    return parameter_count(preset_config(name, **kwargs)) + sentence_encoder_parameter_count()


class ParamStore:
    """Named float64 parameter tensors, each with one gradient slot."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    @classmethod
    def initialize(cls, config: GraphEncoderConfig, seed: int = 0) -> "ParamStore":
        """Uniform init scaled by 1/sqrt(fan_in) for weights; zeros for biases;
        ones for norm gains. Deterministic given the seed."""
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        tensors = {}
        for name, shape in parameter_shapes(config).items():
            if name.endswith(".weight"):
                bound = 1.0 / np.sqrt(shape[0])
                data = rng.uniform(-bound, bound, size=shape)
            elif name.endswith(".gain"):
                data = np.ones(shape)
            else:
                data = np.zeros(shape)
            tensors[name] = Tensor(data, requires_grad=True)
        return cls(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def zero_grads(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def gradients(self) -> dict[str, np.ndarray]:
        return {name: self.tensors[name].grad.copy() for name in self.names()}

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in self.names():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.tensors[name].data).tobytes())
        return digest.hexdigest()


def _neighbor_mean_matrix(sub: EgoSubgraph) -> np.ndarray:
    a = sub.adjacency_matrix()
    deg = a.sum(axis=1, keepdims=True)
    return np.where(deg > 0, a / np.where(deg > 0, deg, 1.0), 0.0)


def _check_inputs(config: GraphEncoderConfig, sub: EgoSubgraph, x_data: np.ndarray):
    if x_data.shape[1] != config.text_dim:
        raise ShapeError(
            f"subgraph features: expected (n, {config.text_dim}), got {x_data.shape}"
        )
    if sub.positional is None:
        raise ShapeError("subgraph has no positional encodings attached")
    if sub.positional.shape[1] != config.positional_dim:
        raise ShapeError(
            f"positional encodings: expected (n, {config.positional_dim}), "
            f"got {sub.positional.shape}"
        )


def encode_graph_tensor(
    store: ParamStore,
    config: GraphEncoderConfig,
    sub: EgoSubgraph,
    x_input: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Forward pass on the tape. Returns (unit-norm embedding (1, d), feature
    leaf) so callers can read gradients w.r.t. the input features."""
    if x_input is None:
        x_input = Tensor(sub.features, requires_grad=True)
    _check_inputs(config, sub, x_input.data)

    n = sub.num_nodes
    heads, hidden = config.heads, config.hidden
    head_dim = hidden // heads
    scale = 1.0 / np.sqrt(head_dim)

    pos = Tensor(sub.positional)
    h = ad.concat([x_input, pos], axis=1) @ store["input.weight"] + store["input.bias"]
    neighbor_mean = Tensor(_neighbor_mean_matrix(sub))

    for i in range(config.layers):
        p = f"layer{i}."
        local = (
            h @ store[p + "local_self.weight"] + store[p + "local_self.bias"]
            + (neighbor_mean @ h) @ store[p + "local_neigh.weight"]
            + store[p + "local_neigh.bias"]
        )

        q = h @ store[p + "attn_q.weight"] + store[p + "attn_q.bias"]
        k = h @ store[p + "attn_k.weight"] + store[p + "attn_k.bias"]
        v = h @ store[p + "attn_v.weight"] + store[p + "attn_v.bias"]
        q3 = ad.transpose(ad.reshape(q, (n, heads, head_dim)), (1, 0, 2))
        k3 = ad.transpose(ad.reshape(k, (n, heads, head_dim)), (1, 0, 2))
        v3 = ad.transpose(ad.reshape(v, (n, heads, head_dim)), (1, 0, 2))
        scores = ad.mul(q3 @ ad.transpose(k3, (0, 2, 1)), ad.as_tensor(scale))
        context = ad.softmax(scores) @ v3
        context = ad.reshape(ad.transpose(context, (1, 0, 2)), (n, hidden))
        attn = context @ store[p + "attn_out.weight"] + store[p + "attn_out.bias"]

        h = ad.layer_norm(h + local + attn, store[p + "norm1.gain"], store[p + "norm1.bias"])
        ff = ad.gelu(h @ store[p + "ffn1.weight"] + store[p + "ffn1.bias"])
        ff = ff @ store[p + "ffn2.weight"] + store[p + "ffn2.bias"]
        h = ad.layer_norm(h + ff, store[p + "norm2.gain"], store[p + "norm2.bias"])

    pooled = ad.tmean(h, axis=0, keepdims=True)
    projected = pooled @ store["proj.weight"] + store["proj.bias"]
    return ad.l2_normalize(projected), x_input


def encode_graph(
    store: ParamStore,
    config: GraphEncoderConfig,
    sub: EgoSubgraph,
    feature_offset: np.ndarray | None = None,
) -> Embedding:
    """Encode a subgraph to a unit-norm embedding (no gradients retained).

    ``feature_offset`` is added to every node's feature row; prompt tuning
    evaluates with its learned offset here.
    """
    features = sub.features if feature_offset is None else sub.features + feature_offset
    out, _ = encode_graph_tensor(store, config, sub, x_input=Tensor(features))
    return Embedding(vector=out.data[0], normalized=True)


def save_checkpoint(path, store: ParamStore, config: GraphEncoderConfig,
                    metadata: dict | None = None) -> None:
    """Binary checkpoint: magic, version, JSON header, row-major float64 blobs.

    Byte-deterministic for identical tensors and metadata.
    """
    names = store.names()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": {
            "layers": config.layers,
            "hidden": config.hidden,
            "heads": config.heads,
            "positional_dim": config.positional_dim,
            "text_dim": config.text_dim,
        },
        "metadata": metadata or {},
        "tensors": [
            {"name": name, "shape": list(store[name].data.shape)} for name in names
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)
        for name in names:
            handle.write(np.ascontiguousarray(store[name].data).astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, GraphEncoderConfig, dict]:
    """Load a checkpoint; rejects unknown magic or mismatched versions."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValidationError("not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + header_len])
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(
            f"checkpoint version {header.get('format_version')} not supported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    config = GraphEncoderConfig(**header["config"])
    offset = 12 + header_len
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        data = np.frombuffer(raw[offset:offset + size], dtype="<f8").reshape(shape)
        tensors[entry["name"]] = Tensor(data.copy(), requires_grad=True)
        offset += size
    expected = set(parameter_shapes(config))
    if set(tensors) != expected:
        raise ValidationError("checkpoint tensor names do not match the config")
    return ParamStore(tensors), config, header.get("metadata", {})
