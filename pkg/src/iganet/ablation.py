"""Design-space sweep over the attention / GCN / guidance / uMLP toggles."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .data import Dataset
from .model import ModelConfig, count_params
from .skeleton import SkeletonGraph
from .training import TrainConfig, evaluate, train

FLAGS = ("use_gcn", "use_g2a", "use_a2g", "use_umlp")

# Rows of the ablation table: attention-only baseline up to the full model.
DESIGN_GRID = [
    {"name": "attention", "use_gcn": False, "use_g2a": False, "use_a2g": False, "use_umlp": False},
    {"name": "+gcn", "use_gcn": True, "use_g2a": False, "use_a2g": False, "use_umlp": False},
    {"name": "+gcn+g2a", "use_gcn": True, "use_g2a": True, "use_a2g": False, "use_umlp": False},
    {"name": "+gcn+a2g", "use_gcn": True, "use_g2a": False, "use_a2g": True, "use_umlp": False},
    {"name": "+gcn+g2a+umlp", "use_gcn": True, "use_g2a": True, "use_a2g": False, "use_umlp": True},
    {"name": "+gcn+a2g+umlp", "use_gcn": True, "use_g2a": False, "use_a2g": True, "use_umlp": True},
    {"name": "full", "use_gcn": True, "use_g2a": True, "use_a2g": True, "use_umlp": True},
]


class GridError(ValueError):
    pass


def load_grid(path_or_name: str) -> list[dict]:
    """A JSON list of rows, each mapping some of ``FLAGS`` to booleans; ``"design"`` is built in."""
    if path_or_name == "design":
        return [dict(r) for r in DESIGN_GRID]
    try:
        rows = json.loads(Path(path_or_name).read_text())
    except (OSError, ValueError) as exc:
        raise GridError(f"cannot read grid {path_or_name!r}: {exc}") from exc
    return validate_grid(rows)


def validate_grid(rows) -> list[dict]:
    if not isinstance(rows, list) or not rows:
        raise GridError("grid must be a non-empty JSON list of rows")
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise GridError(f"grid row {i} is not an object")
        bad = set(row) - set(FLAGS) - {"name"}
        if bad:
            raise GridError(f"grid row {i} has unknown keys {sorted(bad)}")
        full = {f: bool(row.get(f, True)) for f in FLAGS}
        full["name"] = str(row.get("name", f"row{i}"))
        out.append(full)
    return out


@dataclass
class AblationRow:
    name: str
    flags: dict
    mpjpe: float
    train_loss: float
    params: int


def run_grid(
    grid: list[dict],
    train_set: Dataset,
    eval_set: Dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    graph: SkeletonGraph,
) -> list[AblationRow]:
    """Train every row with the same seed and budget and evaluate on ``eval_set``."""
    rows = []
    for row in grid:
        cfg = dataclasses.replace(model_cfg, **{f: row[f] for f in FLAGS})
        result = train(train_set, cfg, train_cfg, graph, eval_set=eval_set)
        report = evaluate(eval_set, result.params, cfg, graph)
        rows.append(
            AblationRow(row["name"], {f: row[f] for f in FLAGS}, report.mpjpe_mm,
                        result.history[-1]["train_loss"], count_params(cfg))
        )
    return rows


def format_table(rows: list[AblationRow], digits: int = 1) -> str:
    cols = ["Attention", "GCN", "G2A", "A2G", "uMLP", "MPJPE"]
    body = []
    for r in rows:
        gcn = r.flags["use_gcn"]
        marks = [True, gcn, gcn and r.flags["use_g2a"], gcn and r.flags["use_a2g"], r.flags["use_umlp"]]
        body.append(["✓" if m else "" for m in marks] + [f"{r.mpjpe:.{digits}f}"])
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(cols)]
    line = lambda cells: " | ".join(c.center(w) for c, w in zip(cells, widths))  # noqa: E731
    return "\n".join([line(cols), "-" * len(line(cols))] + [line(b) for b in body])


def to_csv(rows: list[AblationRow]) -> str:
    lines = ["name,use_gcn,use_g2a,use_a2g,use_umlp,mpjpe_mm,train_loss,params"]
    for r in rows:
        f = r.flags
        lines.append(
            f"{r.name},{int(f['use_gcn'])},{int(f['use_g2a'])},{int(f['use_a2g'])},"
            f"{int(f['use_umlp'])},{r.mpjpe!r},{r.train_loss!r},{r.params}"
        )
    return "\n".join(lines) + "\n"


def ranking(rows: list[AblationRow]) -> list[str]:
    return [r.name for r in sorted(rows, key=lambda r: r.mpjpe)]
