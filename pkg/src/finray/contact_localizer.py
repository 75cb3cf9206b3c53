"""Frame transforms and the iterative contact localization step.

Each simulation iteration places an object twin in the jaw frame (pose
chained from the camera, or pre-estimated along the grasp axis before
contact), intersects it with the deformed jaw surface, and snaps the
intersection center through the undeformed mesh onto the nearest contact
candidate. A rate gate models the slow pose stream feeding a faster
camera loop.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from .mesh_model import (
    IntersectionResult,
    SurfaceMesh,
    TetMesh,
    intersect_approx,
    project_to_inner_surface,
)

if TYPE_CHECKING:
    from .inverse_solver import ContactCandidateSet


class FrameError(ValueError):
    """Frame labels do not chain."""


@dataclass(frozen=True)
class PoseTransform:
    """Rigid transform mapping points from ``frame_from`` to ``frame_to``."""

    rotation: np.ndarray
    translation: np.ndarray
    frame_from: str = "o"
    frame_to: str = "g"

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise FrameError("rotation must be 3x3 and translation length 3")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-10:
            raise FrameError("rotation is not orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, frame_from: str = "o", frame_to: str = "o") -> "PoseTransform":
        return cls(np.eye(3), np.zeros(3), frame_from, frame_to)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def inverse(self) -> "PoseTransform":
        return PoseTransform(self.rotation.T, -self.rotation.T @ self.translation,
                             self.frame_to, self.frame_from)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def chain_pose(outer: PoseTransform, inner: PoseTransform) -> PoseTransform:
    """Compose ``outer . inner``: inner maps a->b, outer maps b->c."""
    if inner.frame_to != outer.frame_from:
        raise FrameError(
            f"cannot chain {outer.frame_from}->{outer.frame_to} "
            f"after {inner.frame_from}->{inner.frame_to}")
    r = outer.rotation @ inner.rotation
    # re-orthonormalize against drift over long chains
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    return PoseTransform(r, outer.rotation @ inner.translation + outer.translation,
                         inner.frame_from, outer.frame_to)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> PoseTransform:
    """Camera pose (camera->world): +z looks at the target, +x right,
    +y down, matching pinhole conventions."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.column_stack([right, down, fwd])
    return PoseTransform(r, eye, "c", "w")


@dataclass
class ContactState:
    """Contact status flag, mounted candidate, and the pre-estimation
    constants (grasp-axis offset and rotated object extent)."""

    status: bool = False
    mounted_index: int = 7
    centroid: Optional[np.ndarray] = None
    l0: float = 0.0
    l_bd: float = 0.0
    stable_frames: int = 0

    def is_stable(self, min_frames: int = 5) -> bool:
        return self.status and self.stable_frames >= min_frames


def pre_estimate_translation(state: ContactState, rotation: np.ndarray,
                             obj: SurfaceMesh) -> float:
    """Grasp-axis translation that brings the rotated twin just into the
    inner surface: offset plus half the rotated x-extent."""
    x = obj.vertices @ np.asarray(rotation, dtype=np.float64).T[:, 0]
    extent = float(x.max() - x.min())
    if extent <= 0.0:
        raise ValueError("object has zero extent along the grasp axis")
    state.l_bd = extent
    return state.l0 + 0.5 * extent


@dataclass(frozen=True)
class LocalizeResult:
    state: ContactState
    remount_to: Optional[int]
    intersection: IntersectionResult
    twin_translation: np.ndarray
    pre_estimated: bool


def select_candidate(centroid: np.ndarray, deformed_vertices: np.ndarray,
                     surface_vertex_ids: np.ndarray, undeformed: TetMesh,
                     candidates: "ContactCandidateSet") -> int:
    """Snap an intersection center to a contact candidate.

    Finds the deformed surface vertex nearest the center, maps it to its
    undeformed position by index, projects onto the inner contact surface,
    and returns the nearest candidate (lowest index on ties).
    """
    pts = deformed_vertices[surface_vertex_ids]
    rel = pts - centroid
    j = surface_vertex_ids[int(np.argmin(np.einsum("ij,ij->i", rel, rel)))]
    q_p = project_to_inner_surface(undeformed, undeformed.vertices[j])
    dists = np.linalg.norm(candidates.positions - q_p, axis=1)
    return int(np.argmin(dists))


def localize_step(state: ContactState, gripper_deformed: SurfaceMesh,
                  undeformed: TetMesh, obj: SurfaceMesh, pose: PoseTransform,
                  candidates: "ContactCandidateSet", density: int = 3,
                  surface_vertex_ids: np.ndarray | None = None) -> LocalizeResult:
    """One localization iteration.

    Places the twin (pose translation when in contact, pre-estimated
    x-translation otherwise), intersects with the deformed jaw, and on
    overlap selects the candidate nearest the projected intersection
    center. Lowest index wins ties. Returns the updated state and the
    remount decision (None when no contact).
    """
    translation = pose.translation.copy()
    pre_estimated = not state.status
    if pre_estimated:
        translation[0] = pre_estimate_translation(state, pose.rotation, obj)
    twin = obj.transformed(rotation=pose.rotation, translation=translation)
    inter = intersect_approx(gripper_deformed, twin, density=density)

    new_state = replace(state)
    remount_to: Optional[int] = None
    if inter.is_empty:
        new_state.status = False
        new_state.stable_frames = 0
        new_state.centroid = None
    else:
        if surface_vertex_ids is None:
            surface_vertex_ids = np.unique(gripper_deformed.triangles)
        c = select_candidate(inter.centroid, gripper_deformed.vertices,
                             surface_vertex_ids, undeformed, candidates)
        remount_to = c
        if state.status and c == state.mounted_index:
            new_state.stable_frames = state.stable_frames + 1
        else:
            new_state.stable_frames = 1
        new_state.status = True
        new_state.mounted_index = c
        new_state.centroid = inter.centroid
    return LocalizeResult(new_state, remount_to, inter, translation, pre_estimated)


@dataclass
class PoseRateGate:
    """Zero-order hold over a slow pose stream.

    Before stable contact the gate serves the latest sample and flags the
    frame degraded when the sample is older than ``timeout``. Once contact
    is stable the pipeline no longer waits on pose freshness: the held
    pose stays valid and staleness is not flagged.
    """

    timeout: float = 0.5
    last_pose: Optional[PoseTransform] = None
    last_time: float = -np.inf

    def feed(self, pose: Optional[PoseTransform], timestamp: float) -> None:
        if pose is not None:
            self.last_pose = pose
            self.last_time = timestamp

    def get(self, now: float, contact_stable: bool) -> tuple[Optional[PoseTransform], str, bool]:
        """Returns (pose, source, degraded); source is fresh/held/stale."""
        if self.last_pose is None:
            return None, "none", not contact_stable
        age = now - self.last_time
        if age <= 1e-9:
            return self.last_pose, "fresh", False
        if contact_stable:
            return self.last_pose, "held", False
        if age > self.timeout:
            return self.last_pose, "stale", True
        return self.last_pose, "held", False
