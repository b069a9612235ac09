import json

import numpy as np
import pytest

from iganet import ablation, gradcheck
from iganet.ablation import AblationRow, GridError, format_table, load_grid, ranking, to_csv, validate_grid


def test_builtin_grid_has_seven_rows():
    grid = load_grid("design")
    assert len(grid) == 7
    assert grid[0] == {"name": "attention", "use_gcn": False, "use_g2a": False, "use_a2g": False, "use_umlp": False}
    assert all(grid[-1][f] for f in ablation.FLAGS)


def test_missing_flags_default_on():
    assert validate_grid([{"use_umlp": False}])[0] == {
        "name": "row0", "use_gcn": True, "use_g2a": True, "use_a2g": True, "use_umlp": False
    }


@pytest.mark.parametrize("rows", [[], {"a": 1}, [3], [{"use_gnn": True}]])
def test_bad_grids(rows):
    with pytest.raises(GridError):
        validate_grid(rows)


def test_grid_file(tmp_path):
    p = tmp_path / "g.json"
    p.write_text(json.dumps([{"name": "x", "use_gcn": False}]))
    assert load_grid(str(p))[0]["use_gcn"] is False
    with pytest.raises(GridError):
        load_grid(str(tmp_path / "missing.json"))


def rows():
    base = dict(use_gcn=True, use_g2a=True, use_a2g=False, use_umlp=True)
    return [
        AblationRow("a", {**base, "use_gcn": False}, 50.0, 1.0, 10),
        AblationRow("b", base, 40.0, 1.0, 12),
    ]


def test_table_marks_and_ranking():
    lines = format_table(rows()).splitlines()
    assert lines[0].split("|")[0].strip() == "Attention"
    first = [c.strip() for c in lines[2].split("|")]
    assert first == ["✓", "", "", "", "✓", "50.0"]  # guidance marks need the GCN branch
    assert ranking(rows()) == ["b", "a"]
    assert to_csv(rows()).splitlines()[2] == "b,1,1,0,1,40.0,1.0,12"


def test_relative_error_definition():
    a = np.array([1.0, 1e-9])
    n = np.array([1.0 + 1e-6, 2e-9])
    # the tiny entry is measured against 1e-4 of the largest gradient
    assert gradcheck.relative_error(a, n) == pytest.approx(1e-5, rel=1e-3)
    assert gradcheck.relative_error(a, n, floor=0) == pytest.approx(0.5)
    assert gradcheck.relative_error(np.zeros(0), np.zeros(0)) == 0.0


def test_numeric_gradient_of_cube():
    from iganet.tensor import Tensor, mul

    t = Tensor(np.array([2.0]), requires_grad=True)
    g = gradcheck.numeric_gradient(lambda: mul(mul(t, t), t), t, eps=1e-4)
    assert g[0] == pytest.approx(12.0, abs=1e-7)
