import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iganet.data import (
    PoseFormatError,
    augment_flip,
    augment_flip_dataset,
    from_arrays,
    load_dataset,
    save_dataset,
    synth_generate,
)
from iganet.skeleton import build_h36m_17, horizontal_flip

G = build_h36m_17()


def write_rows(path, rows, header="#pose-v1 J=17 graph=h36m17"):
    path.write_text(header + "\n" + "\n".join(json.dumps(r) for r in rows) + "\n")
    return path


def row(j=17, out=True):
    r = {"in": np.zeros((j, 2)).tolist()}
    if out:
        r["out"] = np.zeros((j, 3)).tolist()
    return r


def test_roundtrip(tmp_path):
    ds = synth_generate(5, 0, G, with_actions=True)
    save_dataset(tmp_path / "d.jsonl", ds)
    back = load_dataset(tmp_path / "d.jsonl", G)
    np.testing.assert_array_equal(back.inputs(), ds.inputs())
    np.testing.assert_array_equal(back.targets(), ds.targets())
    assert back.actions() == ds.actions()


def test_missing_header(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text(json.dumps(row()) + "\n")
    with pytest.raises(PoseFormatError, match=":1:"):
        load_dataset(p, G)


def test_wrong_joint_count_header(tmp_path):
    p = write_rows(tmp_path / "d.jsonl", [row(16)], header="#pose-v1 J=16 graph=x")
    with pytest.raises(PoseFormatError, match="J=16"):
        load_dataset(p, G)


def test_bad_row_reports_line_number(tmp_path):
    p = write_rows(tmp_path / "d.jsonl", [row(), row(), {"in": [[0, 0]] * 16}])
    with pytest.raises(PoseFormatError, match=":4:"):
        load_dataset(p, G)


def test_non_finite_rejected(tmp_path):
    r = row()
    r["in"][3][0] = float("nan")
    p = tmp_path / "d.jsonl"
    p.write_text("#pose-v1 J=17 graph=h36m17\n" + json.dumps(r) + "\n")
    with pytest.raises(PoseFormatError, match="non-finite"):
        load_dataset(p, G)


def test_missing_target(tmp_path):
    p = write_rows(tmp_path / "d.jsonl", [row(out=False)])
    with pytest.raises(PoseFormatError, match="out"):
        load_dataset(p, G)
    assert len(load_dataset(p, G, require_target=False)) == 1


def test_off_root_target_is_recentered_with_warning(tmp_path):
    r = row()
    r["out"] = (np.ones((17, 3)) * 5).tolist()
    p = write_rows(tmp_path / "d.jsonl", [r])
    with pytest.warns(UserWarning, match="re-centered"):
        ds = load_dataset(p, G)
    np.testing.assert_array_equal(ds.targets(), np.zeros((1, 17, 3)))


def test_from_arrays_validates():
    with pytest.raises(PoseFormatError, match="input shape"):
        from_arrays(np.zeros((2, 16, 2)), None, G)
    ds = from_arrays(np.zeros((2, 17, 2)), np.zeros((2, 17, 3)), G, actions=["a", "b"])
    assert ds.actions() == ["a", "b"] and ds.num_joints == 17


def test_synth_is_deterministic():
    a, b = synth_generate(8, 3, G), synth_generate(8, 3, G)
    np.testing.assert_array_equal(a.targets(), b.targets())
    assert not np.array_equal(a.targets(), synth_generate(8, 4, G).targets())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_synth_keeps_bone_lengths(seed):
    y = synth_generate(4, seed, G).targets()
    par = G.parents
    for k in range(1, 17):
        lengths = np.linalg.norm(y[:, k] - y[:, par[k]], axis=-1)
        np.testing.assert_allclose(lengths, G.bone_lengths[k], rtol=1e-12)


def test_synth_inputs_are_projection_in_unit_box():
    ds = synth_generate(64, 0, G)
    x, y = ds.inputs(), ds.targets()
    np.testing.assert_allclose(x * G.reach_mm, y[..., :2], atol=1e-9)
    assert np.all(np.abs(x) <= 1.0)
    np.testing.assert_array_equal(y[:, 0], 0.0)


def test_synth_poses_vary_in_depth():
    y = synth_generate(64, 0, G).targets()
    assert y[..., 2].std() > 50.0


def test_augment_flip_extremes():
    ds = synth_generate(6, 1, G)
    x, y = ds.inputs(), ds.targets()
    rng = np.random.default_rng(0)
    x0, y0 = augment_flip(x, y, G, 0.0, rng)
    np.testing.assert_array_equal(x0, x)
    x1, y1 = augment_flip(x, y, G, 1.0, rng)
    np.testing.assert_array_equal(x1, horizontal_flip(x, G))
    np.testing.assert_array_equal(y1, horizontal_flip(y, G))
    with pytest.raises(ValueError):
        augment_flip(x, y, G, 1.5, rng)


def test_augment_flip_pairs_inputs_with_targets():
    ds = synth_generate(50, 2, G)
    x, y = augment_flip(ds.inputs(), ds.targets(), G, 0.5, np.random.default_rng(3))
    np.testing.assert_allclose(x * G.reach_mm, y[..., :2], atol=1e-9)
    flipped = augment_flip_dataset(ds, G, 1.0, np.random.default_rng(0))
    np.testing.assert_array_equal(flipped.inputs(), horizontal_flip(ds.inputs(), G))
