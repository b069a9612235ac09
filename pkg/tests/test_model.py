import dataclasses
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iganet import layers as L
from iganet.model import (
    CheckpointCorruptError,
    CheckpointShapeError,
    CheckpointVersionError,
    ModelConfig,
    count_params,
    decode_checkpoint,
    encode_checkpoint,
    forward,
    init_params,
    load_params,
    named_tensors,
    predict,
    save_params,
)
from iganet.skeleton import SkeletonGraph, build_h36m_17

G = build_h36m_17()
SMALL = ModelConfig(channels=16, heads=4, num_blocks=2)


def zero_all(params):
    for _, t in named_tensors(params):
        t.data = np.zeros_like(t.data)


def test_defaults_follow_recipe():
    c = ModelConfig()
    assert (c.num_blocks, c.s_g2a, c.s_a2g, c.channels, c.bottleneck) == (3, 0.5, 0.8, 256, 128)
    assert c.adjacency_norm == "row" and c.f_global == "post"


@pytest.mark.parametrize(
    "kw",
    [dict(channels=10, heads=4), dict(num_blocks=0), dict(adjacency_norm="lap"),
     dict(bottleneck=64, channels=64, heads=4), dict(f_global="mid"), dict(s_g2a=float("nan"))],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_config_dict_roundtrip_and_unknown_key():
    c = ModelConfig.small(s_g2a=0.1)
    assert ModelConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_dict({**c.to_dict(), "width": 3})


@pytest.mark.parametrize("use_umlp", [True, False])
@pytest.mark.parametrize("use_gcn", [True, False])
def test_count_params_matches_enumeration(use_gcn, use_umlp):
    cfg = ModelConfig(channels=32, heads=4, num_blocks=2, use_gcn=use_gcn, use_umlp=use_umlp)
    total = sum(t.data.size for _, t in named_tensors(init_params(cfg)))
    assert count_params(cfg) == total


def test_count_params_small():
    assert count_params(ModelConfig.small()) == 92233
    c = ModelConfig.small()
    assert count_params(c, num_blocks=4) - count_params(c, num_blocks=3) == count_params(c, 2) - count_params(c, 1)


def test_output_shapes():
    params = init_params(SMALL, seed=0)
    assert forward(np.zeros((17, 2)), params, SMALL, G).shape == (17, 3)
    assert forward(np.zeros((5, 17, 2)), params, SMALL, G).shape == (5, 17, 3)


def test_zero_params_zero_output():
    params = init_params(SMALL)
    zero_all(params)
    x = np.random.default_rng(0).normal(size=(3, 17, 2))
    np.testing.assert_array_equal(predict(x, params, SMALL, G), np.zeros((3, 17, 3)))


@pytest.mark.parametrize("scale", [1.0, 10.0])
def test_zero_block_weights_give_identity_plus_head_bias(scale):
    cfg = dataclasses.replace(SMALL, output_scale=scale)
    params = init_params(cfg, seed=1)
    zero_all(params)
    params.head.bias.data = np.array([1.0, -2.0, 3.0])
    x = np.random.default_rng(1).normal(size=(4, 17, 2))
    out = predict(x, params, cfg, G)
    np.testing.assert_array_equal(out, np.broadcast_to(scale * np.array([1.0, -2.0, 3.0]), out.shape))


def test_zero_blocks_pass_embedding_through():
    cfg = dataclasses.replace(SMALL, output_scale=1.0)
    params = init_params(cfg, seed=2)
    for blk in params.blocks:
        zero_all(blk)
    x = np.random.default_rng(2).normal(size=(2, 17, 2))
    emb = x @ params.embed.weight.data + params.embed.pos.data
    want = emb @ params.head.weight.data + params.head.bias.data
    np.testing.assert_allclose(predict(x, params, cfg, G), want, atol=1e-12)


def test_permutation_equivariance_without_graph_or_pos():
    """Attention-only blocks with no positional term commute with any joint permutation."""
    cfg = dataclasses.replace(SMALL, use_gcn=False)
    params = init_params(cfg, seed=3)
    params.embed.pos.data[:] = 0.0
    x = np.random.default_rng(3).normal(size=(2, 17, 2))
    perm = np.random.default_rng(4).permutation(17)
    a = predict(x, params, cfg, G)[:, perm]
    b = predict(x[:, perm], params, cfg, G)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_gcn_breaks_permutation_equivariance():
    params = init_params(SMALL, seed=3)
    params.embed.pos.data[:] = 0.0
    x = np.random.default_rng(3).normal(size=(1, 17, 2))
    perm = np.roll(np.arange(17), 1)
    assert np.max(np.abs(predict(x, params, SMALL, G)[:, perm] - predict(x[:, perm], params, SMALL, G))) > 1e-6


def test_wrong_joint_count():
    with pytest.raises(ValueError, match="joint count"):
        forward(np.zeros((16, 2)), init_params(SMALL), SMALL, G)


def test_custom_graph_size():
    g = SkeletonGraph("chain", 5, ((0, 1), (1, 2), (2, 3), (3, 4)))
    cfg = dataclasses.replace(SMALL, num_joints=5)
    assert forward(np.zeros((2, 5, 2)), init_params(cfg), cfg, g).shape == (2, 5, 3)


def test_init_is_seeded():
    a, b, c = init_params(SMALL, 5), init_params(SMALL, 5), init_params(SMALL, 6)
    for (na, ta), (_, tb), (_, tc) in zip(named_tensors(a), named_tensors(b), named_tensors(c)):
        np.testing.assert_array_equal(ta.data, tb.data)
    assert not np.array_equal(a.blocks[0].iga.attn.wq.data, c.blocks[0].iga.attn.wq.data)


def test_scales_start_at_config_values():
    p = init_params(SMALL)
    assert p.blocks[1].iga.s_g2a.data.shape == () and float(p.blocks[1].iga.s_a2g.data) == 0.8


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(SMALL, seed=7)
    path = tmp_path / "m.ckpt"
    save_params(path, params, SMALL, {"epoch": 3})
    cfg, loaded, meta = load_params(path, expected=SMALL)
    assert cfg == SMALL and meta == {"epoch": 3}
    for (n1, t1), (n2, t2) in zip(named_tensors(params), named_tensors(loaded)):
        assert n1 == n2
        np.testing.assert_array_equal(t1.data, t2.data)
    x = np.random.default_rng(0).normal(size=(2, 17, 2))
    np.testing.assert_array_equal(predict(x, params, SMALL, G), predict(x, loaded, cfg, G))


def test_checkpoint_is_deterministic_bytes():
    assert encode_checkpoint(init_params(SMALL, 1), SMALL) == encode_checkpoint(init_params(SMALL, 1), SMALL)


def test_checkpoint_mismatch_names_field():
    buf = encode_checkpoint(init_params(SMALL), SMALL)
    with pytest.raises(CheckpointShapeError, match="embed"):
        decode_checkpoint(buf, expected=dataclasses.replace(SMALL, num_joints=16))


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_truncated_checkpoint_is_rejected(data):
    buf = encode_checkpoint(init_params(SMALL), SMALL)
    cut = data.draw(st.integers(0, len(buf) - 1))
    with pytest.raises(CheckpointCorruptError):
        decode_checkpoint(buf[:cut])


def test_flipped_byte_is_rejected():
    buf = bytearray(encode_checkpoint(init_params(SMALL), SMALL))
    buf[len(buf) // 2] ^= 0xFF
    with pytest.raises(CheckpointCorruptError, match="checksum"):
        decode_checkpoint(bytes(buf))


def test_future_version_is_rejected():
    buf = bytearray(encode_checkpoint(init_params(SMALL), SMALL))
    buf[8:12] = struct.pack("<I", 99)
    with pytest.raises(CheckpointVersionError, match="v99"):
        decode_checkpoint(bytes(buf))


def test_ablation_params_have_no_gcn():
    p = init_params(dataclasses.replace(SMALL, use_gcn=False, use_umlp=False))
    assert p.blocks[0].iga.gcn1 is None and isinstance(p.blocks[0].mlp, L.MlpParams)
