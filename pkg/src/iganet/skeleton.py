"""Skeleton topology: joints, bones, left/right pairs and the GCN adjacency."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

ADJ_NORMS = ("row", "symmetric")

# Human3.6M 17-joint order as used by the common 2D/3D lifting pipelines.
H36M_JOINTS = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)
H36M_EDGES = (
    (0, 1), (1, 2), (2, 3),
    (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9), (9, 10),
    (8, 11), (11, 12), (12, 13),
    (8, 14), (14, 15), (15, 16),
)
H36M_FLIP_PAIRS = ((4, 1), (5, 2), (6, 3), (11, 14), (12, 15), (13, 16))

# Neutral standing pose in mm: x lateral (subject's left positive), y up, z depth.
H36M_REST_POSE = (
    (0, 0, 0),
    (-130, 0, 0), (-130, -450, 0), (-130, -890, 0),
    (130, 0, 0), (130, -450, 0), (130, -890, 0),
    (0, 230, 0), (0, 480, 0), (0, 590, 0), (0, 700, 0),
    (150, 450, 0), (150, 180, 0), (150, -70, 0),
    (-150, 450, 0), (-150, 180, 0), (-150, -70, 0),
)


class SkeletonError(ValueError):
    pass


def normalize_adjacency(adj: np.ndarray, kind: str = "row") -> np.ndarray:
    """Normalize ``A + I``.

    ``row`` gives ``D^-1 (A + I)`` (rows sum to one); ``symmetric`` gives
    ``D^-1/2 (A + I) D^-1/2``, with ``D`` the degree matrix of ``A + I``.
    """
    a = np.asarray(adj, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise SkeletonError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise SkeletonError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0):
        raise SkeletonError("adjacency must have a zero diagonal; self-connections are added here")
    if not np.all((a == 0) | (a == 1)):
        raise SkeletonError("adjacency entries must be 0 or 1")
    a_tilde = a + np.eye(a.shape[0])
    deg = a_tilde.sum(axis=1)
    if kind == "row":
        return a_tilde / deg[:, None]
    if kind == "symmetric":
        s = 1.0 / np.sqrt(deg)
        return a_tilde * s[:, None] * s[None, :]
    raise SkeletonError(f"unknown adjacency normalization {kind!r}; expected one of {ADJ_NORMS}")


@dataclass(frozen=True, eq=False)
class SkeletonGraph:
    name: str
    num_joints: int
    edges: tuple[tuple[int, int], ...]
    flip_pairs: tuple[tuple[int, int], ...] = ()
    root_index: int = 0
    joint_names: tuple[str, ...] = ()
    rest_pose: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        j = self.num_joints
        if j < 1:
            raise SkeletonError("a skeleton needs at least one joint")
        seen = set()
        for a, b in self.edges:
            if not (0 <= a < j and 0 <= b < j):
                raise SkeletonError(f"edge ({a}, {b}) out of range for {j} joints")
            if a == b:
                raise SkeletonError(f"self-loop edge at joint {a}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise SkeletonError(f"duplicate edge {key}")
            seen.add(key)
        used = [i for pair in self.flip_pairs for i in pair]
        if len(used) != len(set(used)) or any(not 0 <= i < j for i in used):
            raise SkeletonError("flip_pairs must be disjoint pairs of valid joint indices")
        if not 0 <= self.root_index < j:
            raise SkeletonError(f"root index {self.root_index} out of range")
        if self.joint_names and len(self.joint_names) != j:
            raise SkeletonError("joint_names length must equal num_joints")
        if self.rest_pose is not None:
            rp = np.asarray(self.rest_pose, dtype=np.float64)
            if rp.shape != (j, 3):
                raise SkeletonError(f"rest_pose must be {j}x3, got {rp.shape}")
            object.__setattr__(self, "rest_pose", rp - rp[self.root_index])

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_joints, self.num_joints))
        for i, k in self.edges:
            a[i, k] = a[k, i] = 1.0
        return a

    @cached_property
    def _norm_cache(self) -> dict:
        return {}

    def normalized_adjacency(self, kind: str = "row") -> np.ndarray:
        if kind not in self._norm_cache:
            self._norm_cache[kind] = normalize_adjacency(self.adjacency, kind)
        return self._norm_cache[kind]

    @cached_property
    def flip_permutation(self) -> np.ndarray:
        perm = np.arange(self.num_joints)
        for a, b in self.flip_pairs:
            perm[a], perm[b] = b, a
        return perm

    @cached_property
    def parents(self) -> np.ndarray:
        """Parent index of each joint in the tree rooted at ``root_index`` (-1 for root)."""
        parent = np.full(self.num_joints, -2)
        parent[self.root_index] = -1
        order = [self.root_index]
        nbrs = [np.flatnonzero(row) for row in self.adjacency]
        for i in order:
            for k in nbrs[i]:
                if parent[k] == -2:
                    parent[k] = i
                    order.append(k)
        if len(order) != self.num_joints or len(self.edges) != self.num_joints - 1:
            raise SkeletonError(f"skeleton {self.name!r} is not a connected tree")
        object.__setattr__(self, "_bfs_order", np.array(order))
        return parent

    @property
    def bfs_order(self) -> np.ndarray:
        self.parents
        return self._bfs_order

    @cached_property
    def bone_lengths(self) -> np.ndarray:
        """Length of the bone ending at each joint (0 at the root); needs a rest pose."""
        if self.rest_pose is None:
            raise SkeletonError(f"skeleton {self.name!r} has no rest pose")
        par = self.parents
        out = np.zeros(self.num_joints)
        for k in range(self.num_joints):
            if par[k] >= 0:
                out[k] = np.linalg.norm(self.rest_pose[k] - self.rest_pose[par[k]])
        return out

    @cached_property
    def reach_mm(self) -> float:
        """Largest root-to-joint path length; bounds every joint's distance from the root."""
        total = np.zeros(self.num_joints)
        for k in self.bfs_order[1:]:
            total[k] = total[self.parents[k]] + self.bone_lengths[k]
        return float(total.max()) if self.num_joints > 1 else 1.0

    def degree(self, joint: int) -> int:
        return int(self.adjacency[joint].sum())

    def to_json(self) -> dict:
        doc = {
            "name": self.name,
            "joints": list(self.joint_names) if self.joint_names else self.num_joints,
            "edges": [list(e) for e in self.edges],
            "flip_pairs": [list(p) for p in self.flip_pairs],
            "root": self.root_index,
        }
        if self.rest_pose is not None:
            doc["rest_pose"] = self.rest_pose.tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SkeletonGraph":
        try:
            joints = doc["joints"]
            names = tuple(joints) if isinstance(joints, list) else ()
            return cls(
                name=str(doc.get("name", "custom")),
                num_joints=len(names) if names else int(joints),
                edges=tuple((int(a), int(b)) for a, b in doc["edges"]),
                flip_pairs=tuple((int(a), int(b)) for a, b in doc.get("flip_pairs", [])),
                root_index=int(doc.get("root", 0)),
                joint_names=names,
                rest_pose=None if doc.get("rest_pose") is None else np.asarray(doc["rest_pose"], float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SkeletonError):
                raise
            raise SkeletonError(f"malformed skeleton document: {exc}") from exc


def build_h36m_17() -> SkeletonGraph:
    return SkeletonGraph(
        name="h36m17",
        num_joints=17,
        edges=H36M_EDGES,
        flip_pairs=H36M_FLIP_PAIRS,
        root_index=0,
        joint_names=H36M_JOINTS,
        rest_pose=np.array(H36M_REST_POSE, dtype=np.float64),
    )


def load_skeleton(path: str | Path) -> SkeletonGraph:
    with open(path) as fh:
        return SkeletonGraph.from_json(json.load(fh))


BUILTIN_GRAPHS = {"h36m17": build_h36m_17}


def get_graph(name_or_path: str) -> SkeletonGraph:
    """Resolve a built-in skeleton name or a path to a skeleton JSON file."""
    if name_or_path in BUILTIN_GRAPHS:
        return BUILTIN_GRAPHS[name_or_path]()
    p = Path(name_or_path)
    if p.exists():
        return load_skeleton(p)
    raise SkeletonError(f"unknown skeleton {name_or_path!r}")


def horizontal_flip(pose: np.ndarray, graph: SkeletonGraph) -> np.ndarray:
    """Mirror ``(..., J, D)`` poses: negate the lateral (first) axis, swap left/right joints."""
    p = np.asarray(pose, dtype=np.float64)
    if p.shape[-2] != graph.num_joints or p.shape[-1] not in (2, 3):
        raise SkeletonError(f"pose shape {p.shape} incompatible with {graph.num_joints}-joint skeleton")
    out = p[..., graph.flip_permutation, :].copy()
    out[..., 0] = -out[..., 0]
    return out
