"""Building blocks of the lifting network.

All functions accept ``(J, C)`` or batched ``(B, J, C)`` tensors. Parameter
containers are plain dataclasses of :class:`~iganet.tensor.Tensor` so they can
be flattened for optimisation and checkpointing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .skeleton import SkeletonGraph
from .tensor import ShapeError, Tensor

ACTIVATIONS = {"gelu": T.gelu, "relu": T.relu}


@dataclass
class LinearParams:
    weight: Tensor  # C_in x C_out
    bias: Tensor


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class GcnLayerParams:
    weight: Tensor  # C_in x C_out
    bias: Tensor


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    proj: LinearParams  # output projection applied after G2A injection
    heads: int


@dataclass
class IgaBlockParams:
    norm: LayerNormParams
    attn: AttentionParams
    gcn1: GcnLayerParams | None = None
    gcn2: GcnLayerParams | None = None
    s_g2a: Tensor | None = None  # 0-d
    s_a2g: Tensor | None = None  # 0-d


@dataclass
class UmlpParams:
    norm: LayerNormParams
    down: LinearParams
    mid: LinearParams
    up: LinearParams


@dataclass
class MlpParams:
    """Conventional transformer MLP (inverted bottleneck), used for ablations."""

    norm: LayerNormParams
    fc1: LinearParams
    fc2: LinearParams


@dataclass
class EmbedParams:
    weight: Tensor  # 2 x C
    pos: Tensor  # J x C


@dataclass
class HeadParams:
    weight: Tensor  # C x 3
    bias: Tensor


def _adj_tensor(adj) -> Tensor:
    if isinstance(adj, SkeletonGraph):
        adj = adj.normalized_adjacency("row")
    return adj if isinstance(adj, Tensor) else Tensor(adj)


def _scaled(x: Tensor, s) -> Tensor:
    return T.mul(x, s) if isinstance(s, Tensor) else T.scale(x, float(s))


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, Tensor(keep))


def gcn_forward(x: Tensor, p: GcnLayerParams, adj, activation: str | None = "gelu") -> Tensor:
    """Vanilla graph convolution ``act(A_norm X W + b)``.

    ``adj`` is a normalized ``J x J`` adjacency (array or Tensor) or a
    :class:`SkeletonGraph`, in which case its row-normalized form is used.
    """
    a = _adj_tensor(adj)
    if x.shape[-1] != p.weight.shape[0]:
        raise ShapeError(f"gcn: input {x.shape} does not match weight {p.weight.shape}")
    if a.shape != (x.shape[-2], x.shape[-2]):
        raise ShapeError(f"gcn: adjacency {a.shape} does not match {x.shape[-2]} joints")
    h = T.add(T.matmul(a, T.matmul(x, p.weight)), p.bias)
    return h if activation is None else ACTIVATIONS[activation](h)


def multi_head_attention(x: Tensor, p: AttentionParams) -> Tensor:
    """Merged-head ``softmax(Q K^T / sqrt(d)) V`` without the output projection."""
    q = T.split_heads(T.matmul(x, p.wq), p.heads)
    k = T.split_heads(T.matmul(x, p.wk), p.heads)
    v = T.split_heads(T.matmul(x, p.wv), p.heads)
    d = q.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(d))
    return T.merge_heads(T.matmul(T.softmax_lastdim(scores), v))


def attention_g2a(x: Tensor, f_graph: Tensor, p: AttentionParams, s_g2a) -> Tensor:
    """Attention output plus the scaled skeletal features of the first GCN layer."""
    att = multi_head_attention(x, p)
    if f_graph.shape != att.shape:
        raise ShapeError(f"g2a: f_graph {f_graph.shape} vs attention output {att.shape}")
    return T.add(att, _scaled(f_graph, s_g2a))


def a2g_inject(g1_out: Tensor, f_global: Tensor, s_a2g) -> Tensor:
    if g1_out.shape != f_global.shape:
        raise ShapeError(f"a2g: G1 output {g1_out.shape} vs f_global {f_global.shape}")
    return T.add(g1_out, _scaled(f_global, s_a2g))


def iga_forward(
    x: Tensor,
    p: IgaBlockParams,
    adj,
    *,
    use_gcn: bool = True,
    use_g2a: bool = True,
    use_a2g: bool = True,
    activation: str = "gelu",
    f_global: str = "post",
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """One interweaved graph/attention block with an outer residual.

    ``f_global="post"`` feeds the attention output after G2A injection to A2G;
    ``"pre"`` feeds the plain attention output instead.
    """
    xn = T.layer_norm(x, p.norm.gamma, p.norm.beta)
    att = multi_head_attention(xn, p.attn)
    if not use_gcn:
        out = T.linear(att, p.attn.proj.weight, p.attn.proj.bias)
        return T.add(x, _dropout(out, dropout, rng))

    g1 = gcn_forward(xn, p.gcn1, adj, activation)
    x_g2a = T.add(att, _scaled(g1, p.s_g2a)) if use_g2a else att
    glob = x_g2a if f_global == "post" else att
    x_a2g = a2g_inject(g1, glob, p.s_a2g) if use_a2g else g1
    g2 = gcn_forward(x_a2g, p.gcn2, adj, None)
    proj = T.linear(x_g2a, p.attn.proj.weight, p.attn.proj.bias)
    return T.add(x, _dropout(T.add(g2, proj), dropout, rng))


def umlp_forward(x: Tensor, p: UmlpParams, dropout: float = 0.0, rng=None) -> Tensor:
    """U-shaped MLP: down-projection, same-width middle with shortcut, up-projection plus input."""
    xn = T.layer_norm(x, p.norm.gamma, p.norm.beta)
    x_down = T.gelu(T.linear(xn, p.down.weight, p.down.bias))
    x_mid = T.add(T.gelu(T.linear(x_down, p.mid.weight, p.mid.bias)), x_down)
    x_up = T.linear(x_mid, p.up.weight, p.up.bias)
    return T.add(x, _dropout(x_up, dropout, rng))


def umlp_intermediates(x: Tensor, p: UmlpParams) -> tuple[Tensor, Tensor]:
    """(X_down, X_mid) for structural checks."""
    xn = T.layer_norm(x, p.norm.gamma, p.norm.beta)
    x_down = T.gelu(T.linear(xn, p.down.weight, p.down.bias))
    x_mid = T.add(T.gelu(T.linear(x_down, p.mid.weight, p.mid.bias)), x_down)
    return x_down, x_mid


def mlp_forward(x: Tensor, p: MlpParams, dropout: float = 0.0, rng=None) -> Tensor:
    xn = T.layer_norm(x, p.norm.gamma, p.norm.beta)
    h = T.gelu(T.linear(xn, p.fc1.weight, p.fc1.bias))
    return T.add(x, _dropout(T.linear(h, p.fc2.weight, p.fc2.bias), dropout, rng))


def patch_embed(p2d: Tensor, p: EmbedParams) -> Tensor:
    if p2d.shape[-2:] != (p.pos.shape[0], 2):
        raise ShapeError(f"embed: input {p2d.shape} needs trailing shape ({p.pos.shape[0]}, 2)")
    return T.add(T.matmul(p2d, p.weight), p.pos)


def regress_head(x: Tensor, p: HeadParams) -> Tensor:
    return T.linear(x, p.weight, p.bias)
