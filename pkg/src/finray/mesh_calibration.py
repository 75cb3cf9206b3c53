"""Scale calibration of a reconstructed object mesh against a partial
point-cloud observation.

Pipeline: coarse scale from the grasp-axis bounding extents, pixel-grid
partial-view projection of the mesh, rigid ICP, then similarity ICP with
the closed-form least-squares alignment, and a watertight output mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .contact_localizer import PoseTransform
from .mesh_model import (
    MeshError,
    SurfaceMesh,
    _TET_FACES,
    boundary_faces,
    is_watertight,
    surface_sample_points,
    tet_volumes,
    triangle_areas,
)


class CorrespondenceError(RuntimeError):
    """ICP correspondences collapsed (too few inlier pairs)."""


@dataclass
class PointCloud:
    """Points in the camera frame; an optional validity mask selects the
    usable subset."""

    points: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (len(self.points),):
                raise ValueError("mask length mismatch")
        pts = self.valid_points
        if len(pts) == 0:
            raise ValueError("point cloud empty after masking")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite coordinates")

    @property
    def valid_points(self) -> np.ndarray:
        return self.points if self.mask is None else self.points[self.mask]

    def __len__(self) -> int:
        return len(self.valid_points)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics; +z forward, +x right, +y down, pixels."""

    fx: float = 615.0
    fy: float = 615.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.atleast_2d(points)
        z = pts[:, 2]
        u = self.fx * pts[:, 0] / z + self.cx
        v = self.fy * pts[:, 1] / z + self.cy
        return np.column_stack([u, v]), z


def coarse_scale(mesh: SurfaceMesh, cloud: PointCloud) -> tuple[SurfaceMesh, float]:
    """Uniform scale matching the cloud's x-extent, applied about the mesh
    vertex centroid."""
    mesh_extent = float(mesh.vertices[:, 0].max() - mesh.vertices[:, 0].min())
    if mesh_extent <= 0.0:
        raise MeshError("mesh has zero x-extent")
    pts = cloud.valid_points
    scale = float(pts[:, 0].max() - pts[:, 0].min()) / mesh_extent
    centroid = mesh.vertices.mean(axis=0)
    return mesh.transformed(scale=scale, origin=centroid), scale


def partial_view(mesh: SurfaceMesh, camera: CameraModel,
                 max_subdivision: int = 128) -> PointCloud:
    """Camera-visible side of the mesh on the pixel grid.

    Surface samples are generated per triangle at the projected pixel
    footprint; each occupied pixel keeps only the sample closest to the
    camera origin.
    """
    if np.any(mesh.vertices[:, 2] <= 0.0):
        raise MeshError("mesh must lie entirely in front of the camera")
    tv = mesh.vertices[mesh.triangles]
    uv, _ = camera.project(tv.reshape(-1, 3))
    uv = uv.reshape(-1, 3, 2)
    edge_px = np.concatenate([
        np.linalg.norm(uv[:, 1] - uv[:, 0], axis=1),
        np.linalg.norm(uv[:, 2] - uv[:, 1], axis=1),
        np.linalg.norm(uv[:, 0] - uv[:, 2], axis=1),
    ]).reshape(3, -1).max(axis=0)
    n_sub = np.clip(np.ceil(edge_px).astype(int), 1, max_subdivision)

    samples = []
    for n in np.unique(n_sub):
        sel = n_sub == n
        sub = SurfaceMesh(mesh.vertices, mesh.triangles[sel])
        samples.append(surface_sample_points(sub, density=int(n)))
    pts = np.concatenate(samples)

    uvp, z = camera.project(pts)
    px = np.floor(uvp).astype(np.int64)
    ok = (px[:, 0] >= 0) & (px[:, 0] < camera.width) & (px[:, 1] >= 0) & (px[:, 1] < camera.height)
    pts, px = pts[ok], px[ok]
    if len(pts) == 0:
        raise MeshError("mesh projects outside the image")
    pixel_id = px[:, 1] * camera.width + px[:, 0]
    rng = np.linalg.norm(pts, axis=1)
    order = np.lexsort((rng, pixel_id))
    pixel_sorted = pixel_id[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pixel_sorted[1:] != pixel_sorted[:-1]
    return PointCloud(pts[order[first]])


def umeyama_alignment(src: np.ndarray, dst: np.ndarray,
                      with_scale: bool) -> tuple[np.ndarray, np.ndarray, float]:
    """Closed-form least-squares similarity (or rigid) alignment mapping
    src -> dst: returns (R, t, s) with dst ~ s R src + t."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    ds = src - mu_s
    dd = dst - mu_d
    cov = dd.T @ ds / len(src)
    u, d, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    sflip = np.ones(3)
    sflip[2] = sign
    r = (u * sflip) @ vt
    if with_scale:
        var = (ds * ds).sum() / len(src)
        s = float((d * sflip).sum() / var)
    else:
        s = 1.0
    t = mu_d - s * (r @ mu_s)
    return r, t, s


@dataclass
class ICPResult:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    rms: float
    n_iterations: int
    rms_history: list[float] = field(default_factory=list)

    @property
    def pose(self) -> PoseTransform:
        return PoseTransform(self.rotation, self.translation, "src", "dst")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (points @ self.rotation.T) + self.translation


def icp_align(source: PointCloud, target: PointCloud, with_scale: bool = False,
              max_iters: int = 50, tol: float = 1e-6, reject_factor: float = 3.0,
              init: ICPResult | None = None) -> ICPResult:
    """Nearest-neighbor ICP with closed-form per-iteration alignment.

    Correspondences are symmetric (source->target and target->source
    unions), which keeps the similarity fit from collapsing the scale onto
    a patch of the target. The monitored RMS is enforced non-increasing:
    an iteration that would raise it reverts and stops. Correspondence
    rejection at ``reject_factor`` times the median pair distance applies
    to the fit only.
    """
    src = source.valid_points
    dst = target.valid_points
    dst_tree = cKDTree(dst)
    if init is None:
        r, t, s = np.eye(3), np.zeros(3), 1.0
    else:
        r, t, s = init.rotation.copy(), init.translation.copy(), float(init.scale)

    def correspondences(rot, tra, sca):
        moved = sca * (src @ rot.T) + tra
        d_fwd, idx_fwd = dst_tree.query(moved)
        d_rev, idx_rev = cKDTree(moved).query(dst)
        pair_src = np.concatenate([src, src[idx_rev]])
        pair_dst = np.concatenate([dst[idx_fwd], dst])
        d = np.concatenate([d_fwd, d_rev])
        rms = float(np.sqrt(np.mean(d * d)))
        return rms, pair_src, pair_dst, d

    rms, pair_src, pair_dst, d = correspondences(r, t, s)
    history = [rms]
    best = (rms, r, t, s)
    since_best = 0
    iters = 0
    for iters in range(1, max_iters + 1):
        if reject_factor > 0:
            med = np.median(d)
            inlier = d <= reject_factor * max(med, 1e-300)
        else:
            inlier = np.ones(len(d), dtype=bool)
        if inlier.sum() < 3:
            raise CorrespondenceError("fewer than 3 inlier correspondences")
        r, t, s = umeyama_alignment(pair_src[inlier], pair_dst[inlier], with_scale)
        rms, pair_src, pair_dst, d = correspondences(r, t, s)
        # accepted states are monotone non-increasing; worse steps keep
        # iterating from the new correspondences but are never returned
        if rms < best[0]:
            improved = best[0] - rms
            best = (rms, r, t, s)
            history.append(rms)
            since_best = 0
            if improved <= tol * max(rms, 1e-300):
                break
        else:
            since_best += 1
            if since_best >= 10:
                break
    rms, r, t, s = best
    return ICPResult(r, t, s, rms, iters, history)


# ---------------------------------------------------------------------------
# Watertight wrapping and Chamfer distance

def _mesh_median_edge(mesh: SurfaceMesh) -> float:
    tv = mesh.vertices[mesh.triangles]
    e = np.concatenate([
        np.linalg.norm(tv[:, 1] - tv[:, 0], axis=1),
        np.linalg.norm(tv[:, 2] - tv[:, 1], axis=1),
        np.linalg.norm(tv[:, 0] - tv[:, 2], axis=1),
    ])
    return float(np.median(e))


def _circumradii(points: np.ndarray, tets: np.ndarray) -> np.ndarray:
    v = points[tets]
    a = v[:, 1] - v[:, 0]
    b = v[:, 2] - v[:, 0]
    c = v[:, 3] - v[:, 0]
    vol6 = np.einsum("ij,ij->i", a, np.cross(b, c))
    num = (np.einsum("ij,ij->i", a, a)[:, None] * np.cross(b, c)
           + np.einsum("ij,ij->i", b, b)[:, None] * np.cross(c, a)
           + np.einsum("ij,ij->i", c, c)[:, None] * np.cross(a, b))
    with np.errstate(divide="ignore", invalid="ignore"):
        center_off = num / (2.0 * vol6)[:, None]
    r = np.linalg.norm(center_off, axis=1)
    # slivers count as unbounded so no alpha keeps them
    edge_scale = np.linalg.norm(a, axis=1)
    r[np.abs(vol6) < 1e-9 * edge_scale ** 3] = np.inf
    return r


def _largest_component(tets: np.ndarray) -> np.ndarray:
    """Connected component (by shared faces) with the most tets."""
    faces = tets[:, _TET_FACES].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    order = np.lexsort((key[:, 2], key[:, 1], key[:, 0]))
    sk = key[order]
    owner = order // 4
    same = np.all(sk[1:] == sk[:-1], axis=1)
    import scipy.sparse as sp
    import scipy.sparse.csgraph as csgraph
    pairs = np.column_stack([owner[:-1][same], owner[1:][same]])
    n = len(tets)
    adj = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    n_comp, labels = csgraph.connected_components(adj, directed=False)
    if n_comp == 1:
        return tets
    counts = np.bincount(labels)
    return tets[labels == int(np.argmax(counts))]


def alpha_wrap(points: np.ndarray, alpha: float, max_attempts: int = 8) -> SurfaceMesh:
    """Alpha-shape boundary of a point set as a watertight surface.

    Keeps Delaunay tets with circumradius below alpha (growing alpha until
    the boundary is edge-manifold; the convex hull is the final fallback).
    """
    points = np.asarray(points, dtype=np.float64)
    # deterministic sub-tolerance jitter keeps coplanar lattices (box
    # faces) from producing degenerate tets with ambiguous boundaries
    diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    jitter = np.random.default_rng(0xA1FA).standard_normal(points.shape)
    points = points + 1e-7 * diag * jitter
    tri = Delaunay(points)
    tets = tri.simplices.copy()
    flip = tet_volumes(points, tets) < 0
    tets[flip] = tets[flip][:, [0, 1, 3, 2]]
    radii = _circumradii(points, tets)
    for _ in range(max_attempts):
        keep = tets[radii < alpha]
        if len(keep):
            boundary = boundary_faces(_largest_component(keep))
            if is_watertight(boundary):
                return SurfaceMesh(points, boundary)
        alpha *= 1.5
    # fallback: convex hull boundary (all tets kept)
    mesh = SurfaceMesh(points, boundary_faces(tets))
    if not mesh.watertight:
        raise MeshError("alpha wrap failed to produce a watertight surface")
    return mesh


def ensure_watertight(mesh: SurfaceMesh, alpha_factor: float = 2.5,
                      extra_samples: int = 2) -> SurfaceMesh:
    """Return the mesh unchanged when already watertight, else wrap its
    surface samples with an alpha shape sized by the median edge length."""
    if mesh.watertight:
        return mesh
    pts = surface_sample_points(mesh, density=extra_samples)
    pts = np.unique(np.round(pts, 12), axis=0)
    return alpha_wrap(pts, alpha_factor * _mesh_median_edge(mesh))


def sample_surface(mesh: SurfaceMesh, n: int, seed: int = 0) -> np.ndarray:
    """Area-weighted random surface samples."""
    rng = np.random.default_rng(seed)
    areas = triangle_areas(mesh.vertices, mesh.triangles)
    idx = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u = rng.random(n)
    v = rng.random(n)
    over = u + v > 1
    u[over] = 1 - u[over]
    v[over] = 1 - v[over]
    tv = mesh.vertices[mesh.triangles[idx]]
    return tv[:, 0] + u[:, None] * (tv[:, 1] - tv[:, 0]) + v[:, None] * (tv[:, 2] - tv[:, 0])


def chamfer_distance(a: SurfaceMesh, b: SurfaceMesh, n: int = 10000, seed: int = 0) -> float:
    """Symmetric point-to-point L2 Chamfer distance over surface samples."""
    pa = sample_surface(a, n, seed)
    pb = sample_surface(b, n, seed + 1)
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return float(0.5 * (d_ab.mean() + d_ba.mean()))


@dataclass
class CalibrationResult:
    mesh: SurfaceMesh
    total_scale: float
    coarse_factor: float
    icp_scale: float
    rms_rigid: float
    rms_similarity: float
    chamfer_raw: Optional[float] = None
    chamfer_calibrated: Optional[float] = None

    def report(self) -> dict:
        out = {
            "total_scale": self.total_scale,
            "coarse_factor": self.coarse_factor,
            "icp_scale": self.icp_scale,
            "rms_rigid": self.rms_rigid,
            "rms_similarity": self.rms_similarity,
            "watertight": bool(self.mesh.watertight),
        }
        if self.chamfer_raw is not None:
            out["chamfer_raw"] = self.chamfer_raw
            out["chamfer_calibrated"] = self.chamfer_calibrated
        return out


def calibrate(mesh: SurfaceMesh, cloud: PointCloud, camera: CameraModel,
              truth_mesh: SurfaceMesh | None = None, max_iters: int = 150,
              tol: float = 1e-6) -> CalibrationResult:
    """Full calibration: coarse x-extent scale, partial view, rigid then
    similarity ICP, scale applied to the complete mesh, watertight output.

    The partial view is re-projected at each aligned pose so successive
    passes compare matching visible sides. The similarity stage runs as
    re-projected rounds with correspondence rejection disabled: these
    clouds carry no gross outliers, and the visibility-boundary mismatch
    the rejection would trim is precisely what pins the scale.
    """
    coarse_mesh, s_coarse = coarse_scale(mesh, cloud)
    pv = partial_view(coarse_mesh, camera)
    rigid = icp_align(pv, cloud, with_scale=False, max_iters=max_iters, tol=tol)
    aligned = SurfaceMesh(rigid.apply(coarse_mesh.vertices), coarse_mesh.triangles)
    icp_total = 1.0
    sim = None
    for _ in range(3):
        pv2 = partial_view(aligned, camera)
        sim = icp_align(pv2, cloud, with_scale=True, max_iters=max_iters, tol=tol,
                        reject_factor=0.0)
        aligned = SurfaceMesh(sim.apply(aligned.vertices), aligned.triangles)
        icp_total *= sim.scale
    calibrated = ensure_watertight(aligned)
    result = CalibrationResult(
        mesh=calibrated,
        total_scale=s_coarse * icp_total,
        coarse_factor=s_coarse,
        icp_scale=icp_total,
        rms_rigid=rigid.rms,
        rms_similarity=sim.rms,
    )
    if truth_mesh is not None:
        result.chamfer_raw = chamfer_distance(mesh, truth_mesh)
        result.chamfer_calibrated = chamfer_distance(calibrated, truth_mesh)
    return result


# ---------------------------------------------------------------------------
# Point-cloud file I/O (ascii PLY and xyz CSV)

def load_point_cloud(path: str | Path) -> PointCloud:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return _load_ply(path)
    rows = []
    for line in path.read_text().splitlines():
        s = line.strip().replace(",", " ")
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        rows.append([float(x) for x in parts[:3]])
    return PointCloud(np.array(rows))


def _load_ply(path: Path) -> PointCloud:
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError(f"not a PLY file: {path}")
    n = 0
    props = []
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[:1] == ["property"] and n and len(props) < 16:
            props.append(parts[2])
        elif parts[:1] == ["format"] and parts[1] != "ascii":
            raise ValueError("only ascii PLY supported")
        elif parts[:1] == ["end_header"]:
            i += 1
            break
        i += 1
    cols = [props.index(c) for c in ("x", "y", "z")]
    data = np.array([[float(x) for x in lines[i + k].split()] for k in range(n)])
    return PointCloud(data[:, cols])


def save_point_cloud(path: str | Path, points: np.ndarray) -> None:
    path = Path(path)
    points = np.asarray(points, dtype=np.float64)
    if path.suffix.lower() == ".ply":
        header = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
                  "property float x", "property float y", "property float z",
                  "end_header"]
        body = [f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}" for p in points]
        path.write_text("\n".join(header + body) + "\n")
    else:
        path.write_text("\n".join(f"{float(p[0])!r},{float(p[1])!r},{float(p[2])!r}"
                                   for p in points) + "\n")
