"""Full network assembly, configuration, parameter init and checkpoints."""

from __future__ import annotations

import dataclasses
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import layers as L
from . import tensor as T
from .skeleton import ADJ_NORMS, SkeletonGraph
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_joints: int = 17
    channels: int = 256
    heads: int = 8
    bottleneck: int | None = None  # uMLP width; None means channels // 2
    num_blocks: int = 3
    s_g2a: float = 0.5
    s_a2g: float = 0.8
    adjacency_norm: str = "row"
    use_gcn: bool = True
    use_g2a: bool = True
    use_a2g: bool = True
    use_umlp: bool = True
    gcn_activation: str = "gelu"
    f_global: str = "post"
    mlp_ratio: int = 4  # hidden width factor of the conventional MLP
    dropout: float = 0.0
    output_scale: float = 10.0  # head output units -> mm

    def __post_init__(self):
        if self.bottleneck is None:
            self.bottleneck = self.channels // 2
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.channels < 1 or self.heads < 1 or self.channels % self.heads:
            raise ValueError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if not 0 < self.bottleneck < self.channels:
            raise ValueError("uMLP bottleneck must be smaller than channels")
        if self.adjacency_norm not in ADJ_NORMS:
            raise ValueError(f"adjacency_norm must be one of {ADJ_NORMS}")
        if self.gcn_activation not in L.ACTIVATIONS:
            raise ValueError(f"gcn_activation must be one of {sorted(L.ACTIVATIONS)}")
        if self.f_global not in ("post", "pre"):
            raise ValueError("f_global must be 'post' or 'pre'")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        for name in ("s_g2a", "s_a2g", "output_scale"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def small(cls, **overrides) -> "ModelConfig":
        """Desk-scale configuration used for the overfit and generalization checks."""
        return cls(**{"channels": 64, "heads": 4, "num_blocks": 3, **overrides})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class BlockParams:
    iga: L.IgaBlockParams
    mlp: L.UmlpParams | L.MlpParams


@dataclass
class ModelParams:
    embed: L.EmbedParams
    blocks: list[BlockParams] = field(default_factory=list)
    head: L.HeadParams | None = None


# ---------------------------------------------------------------------------
# parameter traversal


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` for every Tensor in a parameter tree, in a fixed order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            child = getattr(obj, f.name)
            if child is not None:
                yield from named_tensors(child, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, child in enumerate(obj):
            yield from named_tensors(child, f"{prefix}.{i}" if prefix else str(i))


def param_dict(params: ModelParams) -> dict[str, Tensor]:
    return dict(named_tensors(params))


def count_params(config: ModelConfig, num_blocks: int | None = None) -> int:
    """Closed-form parameter count; ``num_blocks`` overrides the config's block count."""
    c, j, cb = config.channels, config.num_joints, config.bottleneck
    n = config.num_blocks if num_blocks is None else num_blocks
    embed = 2 * c + j * c
    head = 3 * c + 3
    block = 2 * c + 4 * c * c + c  # norm, q/k/v/proj weights, proj bias
    if config.use_gcn:
        block += 2 * (c * c + c) + 2  # two GCN layers, two guidance scales
    if config.use_umlp:
        block += 2 * c + (c * cb + cb) + (cb * cb + cb) + (cb * c + c)
    else:
        hid = config.mlp_ratio * c
        block += 2 * c + (c * hid + hid) + (hid * c + c)
    return embed + head + n * block


# ---------------------------------------------------------------------------
# initialization


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _linear(rng, fan_in, fan_out) -> L.LinearParams:
    return L.LinearParams(_xavier(rng, fan_in, fan_out), _zeros(fan_out))


def _norm(c) -> L.LayerNormParams:
    return L.LayerNormParams(Tensor(np.ones(c), requires_grad=True), _zeros(c))


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Xavier-uniform weights, zero biases, N(0, 0.02^2) positional embedding."""
    rng = np.random.default_rng(seed)
    c, j = config.channels, config.num_joints
    embed = L.EmbedParams(
        weight=_xavier(rng, 2, c),
        pos=Tensor(rng.normal(0.0, 0.02, size=(j, c)), requires_grad=True),
    )
    blocks = []
    for _ in range(config.num_blocks):
        attn = L.AttentionParams(
            wq=_xavier(rng, c, c),
            wk=_xavier(rng, c, c),
            wv=_xavier(rng, c, c),
            proj=_linear(rng, c, c),
            heads=config.heads,
        )
        iga = L.IgaBlockParams(norm=_norm(c), attn=attn)
        if config.use_gcn:
            iga.gcn1 = L.GcnLayerParams(_xavier(rng, c, c), _zeros(c))
            iga.gcn2 = L.GcnLayerParams(_xavier(rng, c, c), _zeros(c))
            iga.s_g2a = Tensor(np.array(config.s_g2a), requires_grad=True)
            iga.s_a2g = Tensor(np.array(config.s_a2g), requires_grad=True)
        if config.use_umlp:
            cb = config.bottleneck
            mlp = L.UmlpParams(_norm(c), _linear(rng, c, cb), _linear(rng, cb, cb), _linear(rng, cb, c))
        else:
            hid = config.mlp_ratio * c
            mlp = L.MlpParams(_norm(c), _linear(rng, c, hid), _linear(rng, hid, c))
        blocks.append(BlockParams(iga, mlp))
    head = L.HeadParams(_xavier(rng, c, 3), _zeros(3))
    return ModelParams(embed=embed, blocks=blocks, head=head)


# ---------------------------------------------------------------------------
# forward


def forward_features(
    p2d, params: ModelParams, config: ModelConfig, graph: SkeletonGraph, rng=None
) -> Tensor:
    """Embedding followed by the block stack; returns the per-joint features."""
    x2 = p2d if isinstance(p2d, Tensor) else Tensor(p2d)
    if x2.shape[-2] != config.num_joints or graph.num_joints != config.num_joints:
        raise ValueError(
            f"joint count mismatch: input {x2.shape}, config J={config.num_joints}, "
            f"graph J={graph.num_joints}"
        )
    if len(params.blocks) != config.num_blocks:
        raise ValueError(f"params hold {len(params.blocks)} blocks, config expects {config.num_blocks}")
    adj = Tensor(graph.normalized_adjacency(config.adjacency_norm))
    x = L.patch_embed(x2, params.embed)
    for blk in params.blocks:
        x = L.iga_forward(
            x,
            blk.iga,
            adj,
            use_gcn=config.use_gcn,
            use_g2a=config.use_g2a,
            use_a2g=config.use_a2g,
            activation=config.gcn_activation,
            f_global=config.f_global,
            dropout=config.dropout,
            rng=rng,
        )
        if isinstance(blk.mlp, L.UmlpParams):
            x = L.umlp_forward(x, blk.mlp, config.dropout, rng)
        else:
            x = L.mlp_forward(x, blk.mlp, config.dropout, rng)
    return x


def forward(p2d, params: ModelParams, config: ModelConfig, graph: SkeletonGraph, rng=None) -> Tensor:
    """Map ``(J, 2)`` or ``(B, J, 2)`` normalized 2D poses to root-relative 3D poses in mm.

    ``rng`` enables dropout (training only); inference passes ``None``.
    """
    x = forward_features(p2d, params, config, graph, rng)
    y = L.regress_head(x, params.head)
    return y if config.output_scale == 1.0 else T.scale(y, config.output_scale)


def predict(p2d: np.ndarray, params, config, graph) -> np.ndarray:
    return forward(np.asarray(p2d, dtype=np.float64), params, config, graph).data


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout (all integers little-endian):
#   8s  magic b"IGANCKPT"
#   u32 format version
#   u32 n, then n bytes of UTF-8 JSON {"model": ModelConfig, "meta": {...}}
#   u32 number of arrays, then per array:
#       u16 name length, name (UTF-8), u8 ndim, u32 * ndim dims, float64 data
#   u32 CRC32 of every preceding byte

MAGIC = b"IGANCKPT"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


def encode_checkpoint(params: ModelParams, config: ModelConfig, meta: dict | None = None) -> bytes:
    header = json.dumps({"model": config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header]
    named = list(named_tensors(params))
    parts.append(struct.pack("<I", len(named)))
    for name, t in named:
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{t.ndim}I", t.ndim, *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_params(path: str | Path, params: ModelParams, config: ModelConfig, meta: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, config, meta))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointCorruptError(f"checkpoint truncated at byte {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes, expected: ModelConfig | None = None):
    """Parse checkpoint bytes into ``(config, params, meta)``; nothing is returned on any error."""
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointCorruptError("not an IGANet checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format v{version}, this build reads v{FORMAT_VERSION}")
    if len(buf) < len(MAGIC) + 8:
        raise CheckpointCorruptError("checkpoint truncated in header")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointCorruptError("checkpoint checksum mismatch (truncated or damaged)")
    r.buf = buf[:-4]
    (hlen,) = r.unpack("<I")
    try:
        doc = json.loads(r.take(hlen).decode())
        config = ModelConfig.from_dict(doc["model"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointCorruptError(f"bad checkpoint header: {exc}") from exc
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(r.buf):
        raise CheckpointCorruptError("trailing bytes after parameter arrays")

    params = init_params(config)
    _fill(params, arrays, "checkpoint config")
    if expected is not None:
        want = dict(named_tensors(init_params(expected)))
        for name, arr in arrays.items():
            if name not in want:
                raise CheckpointShapeError(f"field {name!r} not present in the expected model")
            if want[name].shape != arr.shape:
                raise CheckpointShapeError(
                    f"field {name!r}: checkpoint shape {arr.shape}, expected {want[name].shape}"
                )
        missing = set(want) - set(arrays)
        if missing:
            raise CheckpointShapeError(f"fields missing from checkpoint: {sorted(missing)}")
    return config, params, doc.get("meta", {})


def _fill(params: ModelParams, arrays: dict, what: str) -> None:
    named = dict(named_tensors(params))
    if set(named) != set(arrays):
        diff = sorted(set(named) ^ set(arrays))
        raise CheckpointShapeError(f"parameter names disagree with {what}: {diff[:5]}")
    for name, t in named.items():
        if t.shape != arrays[name].shape:
            raise CheckpointShapeError(
                f"field {name!r}: stored shape {arrays[name].shape}, {what} implies {t.shape}"
            )
    for name, t in named.items():
        t.data = arrays[name]


def load_params(path: str | Path, expected: ModelConfig | None = None):
    """Read a checkpoint; returns ``(config, params, meta)``."""
    return decode_checkpoint(Path(path).read_bytes(), expected)
