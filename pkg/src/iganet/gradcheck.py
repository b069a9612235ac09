"""Central finite-difference checks for every op, layer and the full model."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from . import tensor as T
from .model import ModelConfig, forward, init_params, named_tensors
from .skeleton import SkeletonGraph, build_h36m_17
from .tensor import GradTape, Tensor

PROBE_CONFIG = dict(num_joints=17, channels=16, heads=4, num_blocks=2)
DEFAULT_EPS = 1e-4
DEFAULT_TOL = 1e-4
# Entries far below the largest gradient of their group are compared against
# that scale; their central-difference truncation error is not relatively small.
REL_FLOOR = 1e-4


@dataclass
class GroupResult:
    name: str
    max_rel_error: float
    size: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor * max_k |a_k|, 1e-12)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = max(floor * float(np.abs(a).max()), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), scale)
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(fn: Callable[[], Tensor], t: Tensor, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to every entry of ``t``."""
    t.data = np.array(t.data, dtype=np.float64, copy=True)
    flat = t.data.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn().item()
        flat[i] = orig - eps
        fm = fn().item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * eps)
    return out.reshape(t.shape)


def check_gradients(
    fn: Callable[[], Tensor], tensors: dict[str, Tensor], eps: float = DEFAULT_EPS
) -> list[GroupResult]:
    with GradTape() as tape:
        loss = fn()
    analytic = tape.gradient(loss, list(tensors.values()))
    results = []
    for (name, t), a in zip(tensors.items(), analytic):
        n = numeric_gradient(fn, t, eps)
        results.append(GroupResult(name, relative_error(a, n), t.data.size))
    return results


def _param(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def _probe(rng, out_shape) -> Callable[[Tensor], Tensor]:
    """Random linear functional; avoids the symmetric cancellations of a plain sum."""
    r = Tensor(rng.uniform(-1, 1, size=out_shape))
    return lambda y: T.sum(T.mul(y, r))


def op_checks(seed: int = 0, eps: float = DEFAULT_EPS) -> list[GroupResult]:
    rng = np.random.default_rng(seed)
    res: list[GroupResult] = []

    def run(prefix, build, tensors):
        for r in check_gradients(build, tensors, eps):
            res.append(dataclasses.replace(r, name=f"{prefix}.{r.name}"))

    a, b = _param(rng, 2, 3, 4), _param(rng, 4, 5)
    f = _probe(rng, (2, 3, 5))
    run("op.matmul", lambda: f(T.matmul(a, b)), {"a": a, "b": b})

    x = _param(rng, 3, 6)
    f = _probe(rng, (3, 6))
    run("op.softmax", lambda: f(T.softmax_lastdim(x)), {"x": x})
    run("op.gelu", lambda: f(T.gelu(x)), {"x": x})

    x, gam, bet = _param(rng, 4, 8), _param(rng, 8), _param(rng, 8)
    f = _probe(rng, (4, 8))
    run("op.layer_norm", lambda: f(T.layer_norm(x, gam, bet)), {"x": x, "gamma": gam, "beta": bet})

    x = _param(rng, 2, 5, 8)
    f = _probe(rng, (2, 5, 8))
    run("op.heads", lambda: f(T.merge_heads(T.transpose(T.transpose(T.split_heads(x, 4))))), {"x": x})

    x = _param(rng, 5, 3)
    f = _probe(rng, (5,))
    run("op.norm", lambda: f(T.norm_lastdim(x)), {"x": x})

    x, s = _param(rng, 3, 4), Tensor(np.array(0.7), requires_grad=True)
    f = _probe(rng, (3, 4))
    run("op.scalar_mul", lambda: f(T.mul(x, s)), {"x": x, "s": s})
    return res


def layer_checks(
    graph: SkeletonGraph | None = None, channels: int = 16, heads: int = 4, seed: int = 0,
    eps: float = DEFAULT_EPS,
) -> list[GroupResult]:
    graph = graph or build_h36m_17()
    rng = np.random.default_rng(seed + 1)
    j, c = graph.num_joints, channels
    adj = graph.normalized_adjacency("row")
    cfg = ModelConfig(num_joints=j, channels=c, heads=heads, num_blocks=1)
    blk = init_params(cfg, seed=seed).blocks[0]
    _randomize(blk, rng)
    res: list[GroupResult] = []

    def run(prefix, build, tensors):
        for r in check_gradients(build, tensors, eps):
            res.append(dataclasses.replace(r, name=f"{prefix}.{r.name}"))

    x = _param(rng, 2, j, c)
    f = _probe(rng, (2, j, c))
    gcn = blk.iga.gcn1
    run("layer.gcn", lambda: f(L.gcn_forward(x, gcn, adj)),
        {"x": x, "weight": gcn.weight, "bias": gcn.bias})

    fg, s = _param(rng, 2, j, c), blk.iga.s_g2a
    attn = blk.iga.attn
    run("layer.attention_g2a", lambda: f(L.attention_g2a(x, fg, attn, s)),
        {"x": x, "f_graph": fg, "wq": attn.wq, "wk": attn.wk, "wv": attn.wv, "s_g2a": s})

    g1 = _param(rng, 2, j, c)
    run("layer.a2g", lambda: f(L.a2g_inject(g1, fg, blk.iga.s_a2g)),
        {"g1": g1, "f_global": fg, "s_a2g": blk.iga.s_a2g})

    iga = dict(named_tensors(blk.iga))
    run("layer.iga", lambda: f(L.iga_forward(x, blk.iga, adj)), {"x": x, **iga})

    umlp = dict(named_tensors(blk.mlp))
    run("layer.umlp", lambda: f(L.umlp_forward(x, blk.mlp)), {"x": x, **umlp})

    p2d = _param(rng, 2, j, 2)
    emb = L.EmbedParams(_param(rng, 2, c), _param(rng, j, c, scale=0.1))
    run("layer.patch_embed", lambda: f(L.patch_embed(p2d, emb)),
        {"p2d": p2d, "weight": emb.weight, "pos": emb.pos})

    head = L.HeadParams(_param(rng, c, 3), _param(rng, 3))
    f3 = _probe(rng, (2, j, 3))
    run("layer.regress_head", lambda: f3(L.regress_head(x, head)),
        {"x": x, "weight": head.weight, "bias": head.bias})
    return res


def _randomize(tree, rng) -> None:
    """Give biases and norm affines non-trivial values so every path carries gradient."""
    for name, t in named_tensors(tree):
        if name.endswith(("bias", "beta")):
            t.data = rng.uniform(-0.1, 0.1, size=t.shape)
        elif name.endswith("gamma"):
            t.data = rng.uniform(0.8, 1.2, size=t.shape)


def model_checks(
    config: ModelConfig | None = None, graph: SkeletonGraph | None = None, seed: int = 0,
    eps: float = DEFAULT_EPS, batch: int = 2,
) -> list[GroupResult]:
    """End-to-end check of the mean per-joint L2 loss against every parameter tensor."""
    config = config or ModelConfig(**PROBE_CONFIG)
    graph = graph or build_h36m_17()
    rng = np.random.default_rng(seed + 2)
    params = init_params(config, seed=seed)
    _randomize(params, rng)
    x = rng.uniform(-1, 1, size=(batch, config.num_joints, 2))
    y = Tensor(rng.uniform(-300, 300, size=(batch, config.num_joints, 3)))

    def loss():
        pred = forward(x, params, config, graph)
        return T.mean(T.norm_lastdim(T.sub(pred, y)))

    res = check_gradients(loss, dict(named_tensors(params)), eps)
    return [dataclasses.replace(r, name=f"model.{r.name}") for r in res]


def run_suite(
    config: ModelConfig | None = None, seed: int = 0, eps: float = DEFAULT_EPS
) -> list[GroupResult]:
    config = config or ModelConfig(**PROBE_CONFIG)
    graph = build_h36m_17() if config.num_joints == 17 else _chain_graph(config.num_joints)
    return (
        op_checks(seed, eps)
        + layer_checks(graph, config.channels, config.heads, seed, eps)
        + model_checks(config, graph, seed, eps)
    )


def _chain_graph(j: int) -> SkeletonGraph:
    return SkeletonGraph(name=f"chain{j}", num_joints=j, edges=tuple((i, i + 1) for i in range(j - 1)))
