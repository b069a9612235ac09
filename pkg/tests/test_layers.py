import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from iganet import layers as L
from iganet.model import ModelConfig, init_params, named_tensors
from iganet.skeleton import build_h36m_17
from iganet.tensor import ShapeError, Tensor

G = build_h36m_17()
ADJ = G.normalized_adjacency()


def random_block(seed, channels=16, heads=4, **cfg):
    config = ModelConfig(channels=channels, heads=heads, num_blocks=1, **cfg)
    params = init_params(config, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for name, t in named_tensors(params):
        if t.ndim > 0:
            t.data = rng.normal(0, 0.4, t.shape)
    return config, params.blocks[0]


def block_arrays(b):
    return {
        "gamma": b.iga.norm.gamma.data, "beta": b.iga.norm.beta.data,
        "wq": b.iga.attn.wq.data, "wk": b.iga.attn.wk.data, "wv": b.iga.attn.wv.data,
        "proj_w": b.iga.attn.proj.weight.data, "proj_b": b.iga.attn.proj.bias.data,
        "g1_w": b.iga.gcn1.weight.data, "g1_b": b.iga.gcn1.bias.data,
        "g2_w": b.iga.gcn2.weight.data, "g2_b": b.iga.gcn2.bias.data,
    }


def test_gcn_matches_neighbour_loops():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 17, 8))
    p = L.GcnLayerParams(Tensor(rng.normal(size=(8, 5))), Tensor(rng.normal(size=5)))
    got = L.gcn_forward(Tensor(x), p, ADJ).data
    want = np.stack([oracles.gcn_loops(s, ADJ, p.weight.data, p.bias.data) for s in x])
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_gcn_accepts_graph_object():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(17, 4)))
    p = L.GcnLayerParams(Tensor(rng.normal(size=(4, 4))), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(L.gcn_forward(x, p, G).data, L.gcn_forward(x, p, ADJ).data)


def test_gcn_isolated_joint_keeps_own_features():
    adj = np.eye(3)  # normalized A+I with no edges
    x = np.arange(6.0).reshape(3, 2)
    p = L.GcnLayerParams(Tensor(np.eye(2)), Tensor(np.zeros(2)))
    np.testing.assert_array_equal(L.gcn_forward(Tensor(x), p, adj, activation=None).data, x)


def test_gcn_shape_errors():
    p = L.GcnLayerParams(Tensor(np.ones((4, 4))), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError, match="adjacency"):
        L.gcn_forward(Tensor(np.ones((5, 4))), p, ADJ)
    with pytest.raises(ShapeError, match="weight"):
        L.gcn_forward(Tensor(np.ones((17, 3))), p, ADJ)


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_attention_matches_per_head_loop(heads):
    _, b = random_block(2, heads=heads)
    x = np.random.default_rng(3).normal(size=(2, 17, 16))
    got = L.multi_head_attention(Tensor(x), b.iga.attn).data
    a = b.iga.attn
    want = np.stack([oracles.attention_per_head(s, a.wq.data, a.wk.data, a.wv.data, heads) for s in x])
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_g2a_zero_scale_is_plain_attention():
    _, b = random_block(4)
    x = Tensor(np.random.default_rng(5).normal(size=(2, 17, 16)))
    f = Tensor(np.random.default_rng(6).normal(size=(2, 17, 16)))
    plain = L.multi_head_attention(x, b.iga.attn).data
    assert np.max(np.abs(L.attention_g2a(x, f, b.iga.attn, 0.0).data - plain)) <= 1e-15
    assert np.max(np.abs(L.attention_g2a(x, f, b.iga.attn, Tensor(0.0)).data - plain)) <= 1e-15


def test_g2a_shape_mismatch():
    _, b = random_block(4)
    with pytest.raises(ShapeError, match="g2a"):
        L.attention_g2a(Tensor(np.ones((17, 16))), Tensor(np.ones((16, 16))), b.iga.attn, 0.5)


def test_a2g_is_scaled_sum():
    g1, fg = np.ones((17, 4)), np.full((17, 4), 2.0)
    np.testing.assert_array_equal(L.a2g_inject(Tensor(g1), Tensor(fg), 0.8).data, np.full((17, 4), 2.6))


@pytest.mark.parametrize("seed", range(5))
def test_iga_with_zero_scales_equals_parallel_baseline(seed):
    _, b = random_block(seed)
    b.iga.s_g2a.data = np.array(0.0)
    b.iga.s_a2g.data = np.array(0.0)
    x = np.random.default_rng(seed + 7).normal(size=(2, 17, 16))
    got = L.iga_forward(Tensor(x), b.iga, ADJ).data
    want = oracles.parallel_block(x, ADJ, block_arrays(b), 4)
    assert np.max(np.abs(got - want)) <= 1e-12


def test_iga_guidance_changes_output():
    _, b = random_block(0)
    x = Tensor(np.random.default_rng(1).normal(size=(17, 16)))
    guided = L.iga_forward(x, b.iga, ADJ).data
    plain = L.iga_forward(x, b.iga, ADJ, use_g2a=False, use_a2g=False).data
    assert np.max(np.abs(guided - plain)) > 1e-3


def test_iga_pre_and_post_global_differ_only_with_g2a():
    _, b = random_block(0)
    x = Tensor(np.random.default_rng(2).normal(size=(17, 16)))
    pre = L.iga_forward(x, b.iga, ADJ, f_global="pre").data
    post = L.iga_forward(x, b.iga, ADJ, f_global="post").data
    assert np.max(np.abs(pre - post)) > 1e-6
    pre = L.iga_forward(x, b.iga, ADJ, f_global="pre", use_g2a=False).data
    post = L.iga_forward(x, b.iga, ADJ, f_global="post", use_g2a=False).data
    np.testing.assert_array_equal(pre, post)


def test_iga_attention_only_branch():
    _, b = random_block(3)
    x = np.random.default_rng(4).normal(size=(17, 16))
    got = L.iga_forward(Tensor(x), b.iga, ADJ, use_gcn=False).data
    a = b.iga.attn
    xn = oracles.layer_norm(x, b.iga.norm.gamma.data, b.iga.norm.beta.data)
    att = oracles.attention_per_head(xn, a.wq.data, a.wk.data, a.wv.data, 4)
    np.testing.assert_allclose(got, x + att @ a.proj.weight.data + a.proj.bias.data, atol=1e-12)


def umlp_arrays(p):
    return {
        "gamma": p.norm.gamma.data, "beta": p.norm.beta.data,
        "dw": p.down.weight.data, "db": p.down.bias.data,
        "mw": p.mid.weight.data, "mb": p.mid.bias.data,
        "uw": p.up.weight.data, "ub": p.up.bias.data,
    }


def test_umlp_matches_straight_line_numpy():
    _, b = random_block(8)
    x = np.random.default_rng(9).normal(size=(3, 17, 16))
    np.testing.assert_allclose(L.umlp_forward(Tensor(x), b.mlp).data, oracles.umlp(x, umlp_arrays(b.mlp)), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16))
def test_umlp_zero_up_path_is_identity(seed):
    _, b = random_block(seed)
    b.mlp.up.weight.data[:] = 0.0
    b.mlp.up.bias.data[:] = 0.0
    x = np.random.default_rng(seed).normal(size=(2, 17, 16))
    np.testing.assert_array_equal(L.umlp_forward(Tensor(x), b.mlp).data, x)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16))
def test_umlp_zero_mid_is_shortcut(seed):
    _, b = random_block(seed)
    b.mlp.mid.weight.data[:] = 0.0
    b.mlp.mid.bias.data[:] = 0.0
    x = Tensor(np.random.default_rng(seed).normal(size=(2, 17, 16)))
    x_down, x_mid = L.umlp_intermediates(x, b.mlp)
    np.testing.assert_array_equal(x_mid.data, x_down.data)


def test_umlp_bottleneck_width():
    _, b = random_block(0)
    x_down, _ = L.umlp_intermediates(Tensor(np.ones((17, 16))), b.mlp)
    assert x_down.shape == (17, 8)


def test_conventional_mlp_width():
    config, b = random_block(0, use_umlp=False)
    assert isinstance(b.mlp, L.MlpParams)
    assert b.mlp.fc1.weight.shape == (16, config.mlp_ratio * 16)


def test_patch_embed_and_head():
    w = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0]])
    pos = np.zeros((2, 3))
    pos[1] = 10.0
    out = L.patch_embed(Tensor([[1.0, 2.0], [3.0, 4.0]]), L.EmbedParams(Tensor(w), Tensor(pos))).data
    np.testing.assert_array_equal(out, [[1, 2, 2], [13, 14, 16]])
    head = L.HeadParams(Tensor(np.ones((3, 3))), Tensor([0.0, 1.0, 2.0]))
    np.testing.assert_array_equal(L.regress_head(Tensor(out), head).data[0], [5, 6, 7])


def test_patch_embed_wrong_joints():
    p = L.EmbedParams(Tensor(np.ones((2, 4))), Tensor(np.zeros((17, 4))))
    with pytest.raises(ShapeError, match="embed"):
        L.patch_embed(Tensor(np.ones((16, 2))), p)


def test_dropout_only_with_rng():
    config, b = random_block(0, dropout=0.5)
    x = Tensor(np.random.default_rng(0).normal(size=(17, 16)))
    a = L.umlp_forward(x, b.mlp, 0.5, None).data
    np.testing.assert_array_equal(a, L.umlp_forward(x, b.mlp, 0.0, None).data)
    c = L.umlp_forward(x, b.mlp, 0.5, np.random.default_rng(1)).data
    assert not np.array_equal(a, c)


def test_block_params_are_dataclasses():
    _, b = random_block(0)
    assert dataclasses.is_dataclass(b.iga) and b.iga.attn.heads == 4
