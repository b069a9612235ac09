"""Pose data: the ``pose-v1`` file format, a synthetic generator and flip augmentation.

``pose-v1`` is line oriented. The first line is a header::

    #pose-v1 J=17 graph=h36m17

and every following non-blank line is one JSON object::

    {"in": [[x, y], ...], "out": [[x, y, z], ...], "action": "Walking", "subject": "S9"}

``in`` holds J normalized image coordinates in [-1, 1]; ``out`` holds J
root-relative joint positions in millimeters and may be omitted for
prediction-only files.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .skeleton import SkeletonGraph, horizontal_flip

HEADER_RE = re.compile(r"^#pose-v1\s+J=(\d+)\s+graph=(\S+)\s*$")


class PoseFormatError(ValueError):
    pass


@dataclass
class PoseSample:
    input2d: np.ndarray
    target3d: np.ndarray | None = None
    action: str | None = None
    subject: str | None = None


@dataclass
class Dataset:
    samples: list[PoseSample] = field(default_factory=list)
    graph_name: str = "h36m17"

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_joints(self) -> int | None:
        return self.samples[0].input2d.shape[0] if self.samples else None

    def inputs(self) -> np.ndarray:
        return np.stack([s.input2d for s in self.samples])

    def targets(self) -> np.ndarray:
        if any(s.target3d is None for s in self.samples):
            raise ValueError("dataset has samples without 3D targets")
        return np.stack([s.target3d for s in self.samples])

    def actions(self) -> list[str | None]:
        return [s.action for s in self.samples]

    def subset(self, idx: Sequence[int]) -> "Dataset":
        return Dataset([self.samples[i] for i in idx], self.graph_name)


def from_arrays(
    inputs2d: np.ndarray,
    targets3d: np.ndarray | None,
    graph: SkeletonGraph,
    actions: Sequence[str] | None = None,
    subjects: Sequence[str] | None = None,
) -> Dataset:
    """Build a dataset from stacked arrays.

    This is the import point for externally prepared data (for example
    Human3.6M-derived arrays). Callers must supply, per sample: ``inputs2d``
    of shape ``(J, 2)`` already normalized to [-1, 1] and ``targets3d`` of
    shape ``(J, 3)`` in millimeters, both in the joint order of ``graph``.
    See ``docs/formats.md`` for the expected mapping.
    """
    x = np.asarray(inputs2d, dtype=np.float64)
    n = x.shape[0]
    y = None if targets3d is None else np.asarray(targets3d, dtype=np.float64)
    samples = []
    for i in range(n):
        samples.append(
            PoseSample(
                input2d=x[i].copy(),
                target3d=None if y is None else _root_relative(y[i].copy(), graph, f"sample {i}"),
                action=None if actions is None else actions[i],
                subject=None if subjects is None else subjects[i],
            )
        )
    ds = Dataset(samples, graph.name)
    _validate(ds, graph)
    return ds


def _root_relative(target: np.ndarray, graph: SkeletonGraph, where: str) -> np.ndarray:
    root = target[graph.root_index]
    if np.any(root != 0):
        warnings.warn(f"{where}: target root at {root.tolist()} re-centered to the origin")
        target = target - root
    return target


def _validate(ds: Dataset, graph: SkeletonGraph) -> None:
    j = graph.num_joints
    for i, s in enumerate(ds.samples):
        if s.input2d.shape != (j, 2):
            raise PoseFormatError(f"sample {i}: input shape {s.input2d.shape}, expected ({j}, 2)")
        if not np.all(np.isfinite(s.input2d)):
            raise PoseFormatError(f"sample {i}: non-finite 2D input")
        if s.target3d is not None:
            if s.target3d.shape != (j, 3):
                raise PoseFormatError(f"sample {i}: target shape {s.target3d.shape}, expected ({j}, 3)")
            if not np.all(np.isfinite(s.target3d)):
                raise PoseFormatError(f"sample {i}: non-finite 3D target")


def save_dataset(path: str | Path, ds: Dataset) -> None:
    j = ds.num_joints or 0
    with open(path, "w") as fh:
        fh.write(f"#pose-v1 J={j} graph={ds.graph_name}\n")
        for s in ds.samples:
            doc = {"in": s.input2d.tolist()}
            if s.target3d is not None:
                doc["out"] = s.target3d.tolist()
            if s.action is not None:
                doc["action"] = s.action
            if s.subject is not None:
                doc["subject"] = s.subject
            fh.write(json.dumps(doc) + "\n")


def load_dataset(path: str | Path, graph: SkeletonGraph, require_target: bool = True) -> Dataset:
    with open(path) as fh:
        header = fh.readline()
        m = HEADER_RE.match(header.strip())
        if not m:
            raise PoseFormatError(f"{path}:1: missing or malformed '#pose-v1 J=<n> graph=<name>' header")
        j, graph_name = int(m.group(1)), m.group(2)
        if j != graph.num_joints:
            raise PoseFormatError(f"{path}:1: file has J={j}, skeleton {graph.name!r} has J={graph.num_joints}")
        samples = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                x = np.asarray(doc["in"], dtype=np.float64)
                y = doc.get("out")
                y = None if y is None else np.asarray(y, dtype=np.float64)
            except (ValueError, KeyError, TypeError) as exc:
                raise PoseFormatError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if x.shape != (j, 2) or (y is not None and y.shape != (j, 3)):
                raise PoseFormatError(
                    f"{path}:{lineno}: expected in ({j}, 2) / out ({j}, 3), got {x.shape} / "
                    f"{None if y is None else y.shape}"
                )
            if not np.all(np.isfinite(x)) or (y is not None and not np.all(np.isfinite(y))):
                raise PoseFormatError(f"{path}:{lineno}: non-finite coordinates")
            if y is None and require_target:
                raise PoseFormatError(f"{path}:{lineno}: row has no 'out' 3D target")
            if y is not None:
                y = _root_relative(y, graph, f"{path}:{lineno}")
            samples.append(PoseSample(x, y, doc.get("action"), doc.get("subject")))
    return Dataset(samples, graph_name)


# ---------------------------------------------------------------------------
# synthetic poses

# Per-bone rotation ranges in radians, keyed by the joint the bone ends at:
# (x-axis min, x-axis max, z-axis min, z-axis max). Limb entries are written
# for the subject's left side; the right side mirrors the z range. The body
# faces +z, so negative x-rotation swings a hanging limb forward.
_H36M_RANGES = {
    "hip": (-0.1, 0.1, -0.1, 0.1),
    "knee": (-1.1, 0.3, -0.1, 0.4),
    "ankle": (0.0, 1.4, -0.05, 0.05),
    "spine": (-0.35, 0.15, -0.15, 0.15),
    "thorax": (-0.3, 0.1, -0.1, 0.1),
    "neck": (-0.3, 0.2, -0.15, 0.15),
    "head": (-0.3, 0.3, -0.2, 0.2),
    "shoulder": (-0.1, 0.1, -0.1, 0.1),
    "elbow": (-1.4, 0.5, 0.0, 1.2),
    "wrist": (-1.8, 0.0, -0.2, 0.2),
}
_DEFAULT_RANGE = (-0.4, 0.4, -0.4, 0.4)
_GLOBAL_YAW = (-0.2, 0.9)
_GLOBAL_TILT = 0.1


def _bone_ranges(graph: SkeletonGraph) -> np.ndarray:
    ranges = np.tile(np.array(_DEFAULT_RANGE), (graph.num_joints, 1))
    if graph.name != "h36m17":
        return ranges
    for k, name in enumerate(graph.joint_names):
        side, _, part = name.rpartition("_")
        if part not in _H36M_RANGES:
            continue
        x0, x1, z0, z1 = _H36M_RANGES[part]
        if side == "r":
            z0, z1 = -z1, -z0
        ranges[k] = (x0, x1, z0, z1)
    return ranges


def synth_generate(
    n: int,
    seed: int,
    graph: SkeletonGraph,
    with_actions: bool = False,
) -> Dataset:
    """Random skeletons with the graph's bone lengths and bounded joint rotations.

    Each bone is its rest direction rotated by the composed rotations of all its
    ancestors and itself, and the whole body gets a bounded yaw and tilt. Inputs
    are the orthographic x-y projection divided by the skeleton's reach, so they
    lie in [-1, 1].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if graph.rest_pose is None:
        raise ValueError(f"skeleton {graph.name!r} has no rest pose; synthetic data needs one")
    rng = np.random.default_rng(seed)
    rest = graph.rest_pose
    parents = graph.parents
    order = graph.bfs_order
    ranges = _bone_ranges(graph)
    scale = graph.reach_mm
    j = graph.num_joints
    samples = []
    for i in range(n):
        rx = rng.uniform(ranges[:, 0], ranges[:, 1])
        rz = rng.uniform(ranges[:, 2], ranges[:, 3])
        local = Rotation.from_euler("xz", np.stack([rx, rz], axis=1)).as_matrix()
        yaw = rng.uniform(*_GLOBAL_YAW)
        tilt = rng.uniform(-_GLOBAL_TILT, _GLOBAL_TILT, size=2)
        glob = Rotation.from_euler("yxz", [yaw, tilt[0], tilt[1]]).as_matrix()
        frames = np.empty((j, 3, 3))
        pos = np.zeros((j, 3))
        frames[order[0]] = glob
        for k in order[1:]:
            p = parents[k]
            frames[k] = frames[p] @ local[k]
            pos[k] = pos[p] + frames[k] @ (rest[k] - rest[p])
        pos[graph.root_index] = 0.0
        action = f"pose{i % 4}" if with_actions else None
        samples.append(PoseSample(pos[:, :2] / scale, pos, action, "synth"))
    return Dataset(samples, graph.name)


# ---------------------------------------------------------------------------
# augmentation


def augment_flip(
    inputs2d: np.ndarray,
    targets3d: np.ndarray | None,
    graph: SkeletonGraph,
    p: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Flip each sample of a ``(B, J, D)`` batch with probability ``p``, inputs and targets together."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("flip probability must be in [0, 1]")
    x = np.asarray(inputs2d, dtype=np.float64)
    mask = rng.random(x.shape[0]) < p
    if not mask.any():
        return x, targets3d
    x = x.copy()
    x[mask] = horizontal_flip(x[mask], graph)
    y = targets3d
    if y is not None:
        y = np.asarray(y, dtype=np.float64).copy()
        y[mask] = horizontal_flip(y[mask], graph)
    return x, y


def augment_flip_dataset(ds: Dataset, graph: SkeletonGraph, p: float, rng: np.random.Generator) -> Dataset:
    out = []
    for s, flip in zip(ds.samples, rng.random(len(ds)) < p):
        if flip:
            s = PoseSample(
                horizontal_flip(s.input2d, graph),
                None if s.target3d is None else horizontal_flip(s.target3d, graph),
                s.action,
                s.subject,
            )
        out.append(s)
    return Dataset(out, ds.graph_name)
