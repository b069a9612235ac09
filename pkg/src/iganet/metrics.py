"""Pose-estimation metrics: MPJPE, PCK and AUC, plus per-action tables."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = np.arange(0.0, 151.0, 5.0)  # 31 points, 0..150

# Column order of the standard Human3.6M action table.
H36M_ACTIONS = (
    "Directions", "Discussion", "Eating", "Greeting", "Phoning", "Photo", "Posing",
    "Purchases", "Sitting", "SittingDown", "Smoking", "Waiting", "WalkDog",
    "Walking", "WalkTogether",
)


def joint_errors(pred, gt) -> np.ndarray:
    """Per-joint Euclidean errors, shape ``(..., J)``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground-truth shape {gt.shape}")
    if pred.shape[-1] != 3:
        raise ValueError(f"expected 3D joints in the last axis, got {pred.shape}")
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred, gt) -> float:
    return float(joint_errors(pred, gt).mean())


def _pck_from_errors(err: np.ndarray, threshold: float) -> float:
    return float(100.0 * np.mean(err <= threshold))


def pck(pred, gt, threshold_mm: float = PCK_THRESHOLD_MM) -> float:
    """Percentage of joints with error <= ``threshold_mm``."""
    if threshold_mm < 0:
        raise ValueError("PCK threshold must be non-negative")
    return _pck_from_errors(joint_errors(pred, gt), threshold_mm)


def auc(pred, gt, thresholds=AUC_THRESHOLDS_MM) -> float:
    err = joint_errors(pred, gt)
    return float(np.mean([_pck_from_errors(err, t) for t in thresholds]))


@dataclass
class EvalReport:
    mpjpe_mm: float
    pck_pct: float
    auc_pct: float
    per_sample: list[float] = field(default_factory=list)
    per_action: dict[str, float] | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def evaluate_arrays(pred, gt, actions=None) -> EvalReport:
    err = joint_errors(pred, gt)
    per_sample = err.reshape(err.shape[0], -1).mean(axis=1) if err.ndim > 1 else err.mean(keepdims=True)
    per_action = None
    if actions is not None and all(a is not None for a in actions):
        groups: dict[str, list[float]] = {}
        for a, e in zip(actions, per_sample):
            groups.setdefault(a, []).append(float(e))
        per_action = {k: row["mpjpe"] for k, row in _rows(groups).items()}
    return EvalReport(
        mpjpe_mm=float(err.mean()),
        pck_pct=_pck_from_errors(err, PCK_THRESHOLD_MM),
        auc_pct=float(np.mean([_pck_from_errors(err, t) for t in AUC_THRESHOLDS_MM])),
        per_sample=[float(v) for v in per_sample],
        per_action=per_action,
    )


def _rows(groups: dict[str, list[float]]) -> dict[str, dict]:
    rows = {}
    for action, values in groups.items():
        if not values:
            warnings.warn(f"action {action!r} has no samples; omitted from table")
            continue
        rows[action] = {"mpjpe": float(np.mean(values)), "count": len(values)}
    return rows


@dataclass
class ActionTable:
    rows: dict[str, dict]
    avg: float
    avg_mode: str

    def columns(self) -> list[str]:
        known = [a for a in H36M_ACTIONS if a in self.rows]
        return known + sorted(a for a in self.rows if a not in H36M_ACTIONS)

    def to_dict(self) -> dict:
        return {
            "actions": {a: self.rows[a]["mpjpe"] for a in self.columns()},
            "counts": {a: self.rows[a]["count"] for a in self.columns()},
            "avg": self.avg,
            "avg_mode": self.avg_mode,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_text(self, digits: int = 1) -> str:
        cols = self.columns() + ["Avg"]
        vals = [f"{self.rows[a]['mpjpe']:.{digits}f}" for a in self.columns()]
        vals.append(f"{self.avg:.{digits}f}")
        widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
        head = " | ".join(c.rjust(w) for c, w in zip(cols, widths))
        body = " | ".join(v.rjust(w) for v, w in zip(vals, widths))
        return f"{head}\n{'-' * len(head)}\n{body}"

    def to_csv(self) -> str:
        lines = ["action,mpjpe_mm,count"]
        lines += [f"{a},{self.rows[a]['mpjpe']!r},{self.rows[a]['count']}" for a in self.columns()]
        lines.append(f"Avg,{self.avg!r},{sum(r['count'] for r in self.rows.values())}")
        return "\n".join(lines) + "\n"


def per_action_table(groups: dict[str, list[float]], avg_mode: str = "sample") -> ActionTable:
    """Per-action MPJPE from per-sample errors grouped by action label.

    ``avg_mode="sample"`` pools all samples; ``"row"`` averages the action rows.
    """
    rows = _rows(groups)
    if not rows:
        raise ValueError("no non-empty action groups")
    if avg_mode == "sample":
        pooled = [v for a in rows for v in groups[a]]
        avg = float(np.mean(pooled))
    elif avg_mode == "row":
        avg = float(np.mean([r["mpjpe"] for r in rows.values()]))
    else:
        raise ValueError(f"avg_mode must be 'sample' or 'row', got {avg_mode!r}")
    return ActionTable(rows, avg, avg_mode)
