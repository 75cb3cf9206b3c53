"""Tetrahedral and surface mesh types with the spatial queries the
contact localizer needs: watertight surface extraction, ray-parity point
containment over a BVH, sampled boolean-intersection approximation, and
closest-point projection onto the inner contact surface.

All coordinates are meters. Meshes are treated as immutable after
construction (arrays are write-locked); ``DeformedState`` is the one
mutable companion and carries per-vertex displacements index-aligned with
its owning mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class WatertightError(MeshError):
    """Operation requires a watertight mesh."""


def _lock(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product over the last axis without np.cross overhead."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.float64)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def tet_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    v = vertices[tets]
    return np.linalg.det(v[:, 1:] - v[:, :1]) / 6.0


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v = vertices[triangles]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def enclosed_volume(vertices: np.ndarray, triangles: np.ndarray) -> float:
    """Signed volume of a closed, outward-oriented triangle mesh."""
    v = vertices[triangles]
    return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


def is_watertight(triangles: np.ndarray) -> bool:
    """True iff every undirected edge is shared by exactly two triangles
    with consistent orientation (each directed edge appears exactly once)."""
    if len(triangles) == 0:
        return False
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    # consistent orientation: no directed edge repeats
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    se = edges[order]
    if np.any(np.all(se[1:] == se[:-1], axis=1)):
        return False
    # closed: each directed edge has its reverse present
    fwd = se[:, 0] * (edges.max() + 1) + se[:, 1]
    rev = edges[:, 1] * (edges.max() + 1) + edges[:, 0]
    return bool(np.all(np.isin(fwd, rev)))


@dataclass
class TetMesh:
    """Gripper volume mesh with designated boundary-condition index sets.

    ``fixed_vertex_ids`` is the clamped base region; ``inner_surface_ids``
    identifies the inner contact surface. The two sets must be disjoint.
    """

    vertices: np.ndarray
    tets: np.ndarray
    fixed_vertex_ids: np.ndarray
    inner_surface_ids: np.ndarray

    def __post_init__(self):
        self.vertices = _lock(np.asarray(self.vertices, dtype=np.float64))
        self.tets = _lock(np.asarray(self.tets, dtype=np.int64))
        self.fixed_vertex_ids = _lock(np.asarray(self.fixed_vertex_ids, dtype=np.int64))
        self.inner_surface_ids = _lock(np.asarray(self.inner_surface_ids, dtype=np.int64))
        n = len(self.vertices)
        if self.tets.size and self.tets.max() >= n:
            raise MeshError("tet index out of range")
        if self.tets.min(initial=0) < 0:
            raise MeshError("negative tet index")
        vols = tet_volumes(self.vertices, self.tets)
        if np.any(vols <= 0):
            raise MeshError(f"{int((vols <= 0).sum())} non-positive tet volumes")
        for ids, name in ((self.fixed_vertex_ids, "fixed"), (self.inner_surface_ids, "inner")):
            if ids.size and (ids.min() < 0 or ids.max() >= n):
                raise MeshError(f"{name} vertex id out of range")
        if np.intersect1d(self.fixed_vertex_ids, self.inner_surface_ids).size:
            raise MeshError("fixed and inner surface sets overlap")
        self._surface: Optional[SurfaceMesh] = None
        self._inner_triangles: Optional[np.ndarray] = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def surface(self) -> "SurfaceMesh":
        """Undeformed boundary surface (cached)."""
        if self._surface is None:
            self._surface = extract_surface(self)
        return self._surface

    def inner_triangles(self) -> np.ndarray:
        """Boundary triangles whose vertices all lie on the inner contact
        surface, in undeformed coordinates."""
        if self._inner_triangles is None:
            tris = self.surface().triangles
            mask = np.all(np.isin(tris, self.inner_surface_ids), axis=1)
            self._inner_triangles = _lock(tris[mask])
        return self._inner_triangles


@dataclass
class DeformedState:
    """Per-vertex displacement field aligned with an owning TetMesh."""

    displacements: np.ndarray

    def __post_init__(self):
        self.displacements = np.asarray(self.displacements, dtype=np.float64)
        if self.displacements.ndim != 2 or self.displacements.shape[1] != 3:
            raise MeshError("displacements must be (n, 3)")

    @classmethod
    def zero(cls, mesh: TetMesh) -> "DeformedState":
        return cls(np.zeros_like(mesh.vertices))

    def positions(self, mesh: TetMesh) -> np.ndarray:
        if len(self.displacements) != mesh.n_vertices:
            raise MeshError("state length does not match mesh")
        return mesh.vertices + self.displacements


# faces of a positively-oriented tet (a,b,c,d) with outward normals
_TET_FACES = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])


@dataclass
class SurfaceMesh:
    """Triangle mesh; ``watertight`` is verified at construction."""

    vertices: np.ndarray
    triangles: np.ndarray
    watertight: bool = field(default=False)

    def __post_init__(self):
        self.vertices = _lock(np.asarray(self.vertices, dtype=np.float64))
        self.triangles = _lock(np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle index out of range")
        self.watertight = is_watertight(self.triangles)
        self._bvh: Optional[TriangleBVH] = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def bvh(self) -> "TriangleBVH":
        if self._bvh is None:
            self._bvh = TriangleBVH(self.vertices, self.triangles)
        return self._bvh

    def transformed(self, rotation: np.ndarray | None = None,
                    translation: np.ndarray | None = None,
                    scale: float = 1.0,
                    origin: np.ndarray | None = None) -> "SurfaceMesh":
        """Similarity-transformed copy: scale about ``origin``, then rotate,
        then translate."""
        v = self.vertices
        if origin is not None:
            v = (v - origin) * scale + origin
        elif scale != 1.0:
            v = v * scale
        if rotation is not None:
            v = v @ np.asarray(rotation).T
        if translation is not None:
            v = v + np.asarray(translation)
        return SurfaceMesh(v, self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


class DeformableSurface:
    """Fixed-topology surface whose vertices move between queries.

    Watertightness is checked once at construction; ``update`` refits the
    BVH in place. Duck-compatible with SurfaceMesh for the containment and
    intersection queries (single-writer, as with DeformedState).
    """

    def __init__(self, template: SurfaceMesh):
        if not template.watertight:
            raise WatertightError("deformable surface requires a watertight template")
        self.triangles = template.triangles
        self.vertices = np.array(template.vertices)
        self.watertight = True
        self._bvh = TriangleBVH(self.vertices, self.triangles)

    def update(self, vertices: np.ndarray) -> None:
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self._bvh.refit(self.vertices)

    def bvh(self) -> "TriangleBVH":
        return self._bvh

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        root = self._bvh
        return root.node_min[0].copy(), root.node_max[0].copy()


def boundary_faces(tets: np.ndarray) -> np.ndarray:
    """Triangles belonging to exactly one tet, outward-oriented when the
    tets are positively oriented."""
    faces = tets[:, _TET_FACES].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    order = np.lexsort((key[:, 2], key[:, 1], key[:, 0]))
    sk = key[order]
    same_next = np.zeros(len(sk), dtype=bool)
    same_next[:-1] = np.all(sk[1:] == sk[:-1], axis=1)
    same_prev = np.zeros(len(sk), dtype=bool)
    same_prev[1:] = same_next[:-1]
    return faces[order[~(same_next | same_prev)]]


def extract_surface(mesh: TetMesh, state: DeformedState | None = None) -> SurfaceMesh:
    """Boundary triangle mesh of the (optionally deformed) tet mesh.

    The vertex array keeps the full, index-aligned tet vertex set so
    surface vertex k coincides with deformed vertex k.
    """
    if state is not None:
        verts = state.positions(mesh)
    else:
        verts = mesh.vertices
    surf = SurfaceMesh(verts, boundary_faces(mesh.tets))
    if not surf.watertight:
        raise MeshError("extracted surface is not watertight")
    return surf


# ---------------------------------------------------------------------------
# BVH and ray queries

_RAY_SEED = 0x5EED


def _seeded_directions(n: int) -> np.ndarray:
    rng = np.random.default_rng(_RAY_SEED)
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


# points that graze a triangle on every cast are effectively on the
# surface; after these casts the last parity answer stands
_FALLBACK_DIRECTIONS = _seeded_directions(4)


class TriangleBVH:
    """Median-split AABB tree over triangles with vectorized frontier
    traversal. Topology is fixed at build time; ``refit`` updates the
    boxes for deformed vertex positions."""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray, leaf_size: int = 16):
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.leaf_size = leaf_size
        n = len(self.triangles)
        if n == 0:
            raise MeshError("empty triangle set")
        # node arrays grown during build
        self._min: list[np.ndarray] = []
        self._max: list[np.ndarray] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._start: list[int] = []
        self._count: list[int] = []
        verts = np.asarray(vertices, dtype=np.float64)
        tv = verts[self.triangles]
        centroids = tv.mean(axis=1)
        self.tri_order = np.arange(n)
        self._build(tv, centroids, 0, n)
        self.node_min = np.array(self._min)
        self.node_max = np.array(self._max)
        self.node_left = np.array(self._left)
        self.node_right = np.array(self._right)
        self.node_start = np.array(self._start)
        self.node_count = np.array(self._count)
        del self._min, self._max, self._left, self._right, self._start, self._count
        # vectorized-refit helpers: leaves hold contiguous tri_order ranges;
        # internal nodes reduce children level by level
        leaf_mask = self.node_count > 0
        self._leaf_ids = np.flatnonzero(leaf_mask)
        self._leaf_starts = self.node_start[self._leaf_ids]
        depth = np.zeros(len(self.node_left), dtype=np.int64)
        for i in range(len(self.node_left)):
            if not leaf_mask[i]:
                depth[self.node_left[i]] = depth[i] + 1
                depth[self.node_right[i]] = depth[i] + 1
        internal = np.flatnonzero(~leaf_mask)
        self._internal_levels = [
            internal[depth[internal] == d]
            for d in range(int(depth.max(initial=0)), -1, -1)
        ]
        self._internal_levels = [lvl for lvl in self._internal_levels if len(lvl)]
        self.refit(verts)

    def _build(self, tv, centroids, lo, hi) -> int:
        idx = len(self._left)
        self._min.append(np.zeros(3))
        self._max.append(np.zeros(3))
        self._left.append(-1)
        self._right.append(-1)
        self._start.append(lo)
        self._count.append(hi - lo)
        if hi - lo <= self.leaf_size:
            return idx
        sub = self.tri_order[lo:hi]
        c = centroids[sub]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        order = np.argsort(c[:, axis], kind="stable")
        self.tri_order[lo:hi] = sub[order]
        mid = lo + (hi - lo) // 2
        self._count[idx] = 0
        self._left[idx] = self._build(tv, centroids, lo, mid)
        self._right[idx] = self._build(tv, centroids, mid, hi)
        return idx

    def refit(self, vertices: np.ndarray) -> None:
        """Recompute node boxes bottom-up for new vertex positions."""
        self.vertices = np.asarray(vertices, dtype=np.float64)
        tv = self.vertices[self.triangles[self.tri_order]]
        tmin = tv.min(axis=1)
        tmax = tv.max(axis=1)
        self.node_min[self._leaf_ids] = np.minimum.reduceat(tmin, self._leaf_starts)
        self.node_max[self._leaf_ids] = np.maximum.reduceat(tmax, self._leaf_starts)
        for lvl in self._internal_levels:
            l, r = self.node_left[lvl], self.node_right[lvl]
            self.node_min[lvl] = np.minimum(self.node_min[l], self.node_min[r])
            self.node_max[lvl] = np.maximum(self.node_max[l], self.node_max[r])
        self._tv0 = tv[:, 0]
        self._e1 = tv[:, 1] - tv[:, 0]
        self._e2 = tv[:, 2] - tv[:, 0]

    def _leaves_for(self, origins: np.ndarray, dirs: np.ndarray, t_max: float):
        """Yield (leaf_index, ray_index_array) pairs for rays possibly
        hitting each leaf within parameter range (0, t_max]."""
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
        stack = [(0, np.arange(len(origins)))]
        node_min, node_max = self.node_min, self.node_max
        while stack:
            node, rays = stack.pop()
            o = origins[rays]
            iv = inv[rays]
            t1 = (node_min[node] - o) * iv
            t2 = (node_max[node] - o) * iv
            # fmin/fmax drop the NaNs from 0 * inf on degenerate axes
            near = np.fmin(t1, t2)
            far = np.fmax(t1, t2)
            lo = np.fmax(np.fmax(near[:, 0], near[:, 1]), near[:, 2])
            hi = np.fmin(np.fmin(far[:, 0], far[:, 1]), far[:, 2])
            hit = (hi >= np.maximum(lo, 0.0)) & (lo <= t_max)
            rays = rays[hit]
            if rays.size == 0:
                continue
            if self.node_count[node] > 0:
                yield node, rays
            else:
                stack.append((self.node_left[node], rays))
                stack.append((self.node_right[node], rays))

    def _intersect_leaf(self, node: int, origins, dirs):
        """Moller-Trumbore over one leaf. Returns (t, u, v, det_ok) arrays of
        shape (n_rays, n_tris)."""
        s, c = self.node_start[node], self.node_count[node]
        v0 = self._tv0[s:s + c]
        e1 = self._e1[s:s + c]
        e2 = self._e2[s:s + c]
        d = dirs[:, None, :]
        h = _cross(d, e2[None, :, :])
        a = np.einsum("ij,kij->ki", e1, h)
        scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
        det_ok = np.abs(a) > 1e-14 * np.maximum(scale, 1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(det_ok, 1.0 / a, 0.0)
        srel = origins[:, None, :] - v0[None, :, :]
        u = f * np.einsum("kij,kij->ki", srel, h)
        q = _cross(srel, e1[None, :, :])
        v = f * np.einsum("kj,kij->ki", dirs, q)
        t = f * np.einsum("ij,kij->ki", e2, q)
        return t, u, v, det_ok

    def count_crossings(self, points: np.ndarray, direction: np.ndarray,
                        eps: float = 1e-9):
        """Ray-crossing counts from each point along one shared direction.

        Returns (counts, suspect) where suspect marks rays that grazed a
        triangle edge/vertex or plane and need a re-cast.
        """
        n = len(points)
        counts = np.zeros(n, dtype=np.int64)
        suspect = np.zeros(n, dtype=bool)
        dirs = np.broadcast_to(direction, (n, 3))
        for node, rays in self._leaves_for(points, dirs, np.inf):
            t, u, v, det_ok = self._intersect_leaf(node, points[rays], dirs[rays])
            w = 1.0 - u - v
            interior = det_ok & (u > eps) & (v > eps) & (w > eps) & (t > eps)
            grazing = (~det_ok) | (
                (np.minimum(np.minimum(np.abs(u), np.abs(v)), np.abs(w)) <= eps)
                & (u > -eps) & (v > -eps) & (w > -eps) & (t > -eps)
            ) | (np.abs(t) <= eps)
            np.add.at(counts, rays, interior.sum(axis=1))
            np.logical_or.at(suspect, rays, grazing.any(axis=1))
        return counts, suspect

    def first_hit_fraction(self, origins: np.ndarray, targets: np.ndarray,
                           t_lo: float = 1e-9, t_hi: float = 1.0 - 1e-9) -> np.ndarray:
        """Smallest hit parameter along each segment origin->target within
        (t_lo, t_hi), or +inf when unobstructed."""
        dirs = targets - origins
        best = np.full(len(origins), np.inf)
        for node, rays in self._leaves_for(origins, dirs, t_hi):
            t, u, v, det_ok = self._intersect_leaf(node, origins[rays], dirs[rays])
            ok = det_ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > t_lo) & (t < t_hi)
            t = np.where(ok, t, np.inf)
            np.minimum.at(best, rays, t.min(axis=1))
        return best


def point_inside(mesh: SurfaceMesh, points: np.ndarray,
                 return_on_surface: bool = False):
    """Ray-crossing parity containment test for one or many points.

    Deterministic for points not on the surface: grazing rays are re-cast
    along the next seeded direction. Points that graze on every cast are
    effectively on the surface; they settle with the last parity answer,
    or are reported separately with ``return_on_surface``.
    """
    if not mesh.watertight:
        raise WatertightError("point containment requires a watertight mesh")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    bvh = mesh.bvh()
    counts = np.zeros(len(pts), dtype=np.int64)
    on_surface = np.zeros(len(pts), dtype=bool)
    remaining = np.arange(len(pts))
    for direction in _FALLBACK_DIRECTIONS:
        c, suspect = bvh.count_crossings(pts[remaining], direction)
        settled = ~suspect
        counts[remaining[settled]] = c[settled]
        remaining = remaining[suspect]
        if remaining.size == 0:
            break
    else:
        counts[remaining] = c[suspect]
        on_surface[remaining] = True
    inside = (counts % 2) == 1
    if np.asarray(points).ndim == 1:
        if return_on_surface:
            return bool(inside[0]), bool(on_surface[0])
        return bool(inside[0])
    if return_on_surface:
        return inside, on_surface
    return inside


@dataclass
class IntersectionResult:
    """Sampled overlap between two watertight meshes."""

    sample_count: int
    centroid: Optional[np.ndarray]
    points: Optional[np.ndarray] = None

    @property
    def is_empty(self) -> bool:
        return self.sample_count == 0


def surface_sample_points(mesh: SurfaceMesh, density: int = 3) -> np.ndarray:
    """Barycentric lattice samples on every triangle.

    ``density`` is the edge subdivision count; density 1 yields triangle
    corners only.
    """
    if density < 1:
        raise ValueError("density must be >= 1")
    n = density
    ij = np.array([(i, j) for i in range(n + 1) for j in range(n + 1 - i)], dtype=np.float64)
    bary = np.column_stack([ij[:, 0], ij[:, 1], n - ij[:, 0] - ij[:, 1]]) / n
    tv = mesh.vertices[mesh.triangles]
    return np.einsum("sb,tbx->tsx", bary, tv).reshape(-1, 3)


def intersect_approx(gripper: SurfaceMesh, obj: SurfaceMesh,
                     density: int = 3, keep_points: bool = False) -> IntersectionResult:
    """Penetration-sampled stand-in for the boolean intersection.

    Samples each surface and keeps points strictly inside the other mesh;
    the centroid of the union stands in for the intersection's center.
    """
    for m, name in ((gripper, "gripper"), (obj, "object")):
        if not m.watertight:
            raise WatertightError(f"{name} mesh must be watertight")
    lo_g, hi_g = gripper.bounds()
    lo_o, hi_o = obj.bounds()
    if np.any(lo_g > hi_o) or np.any(lo_o > hi_g):
        return IntersectionResult(0, None)
    samples_o = surface_sample_points(obj, density)
    samples_g = surface_sample_points(gripper, density)
    # cull to the mutual bounding box before the parity tests
    box_lo = np.maximum(lo_g, lo_o) - 1e-12
    box_hi = np.minimum(hi_g, hi_o) + 1e-12
    samples_o = samples_o[np.all((samples_o >= box_lo) & (samples_o <= box_hi), axis=1)]
    samples_g = samples_g[np.all((samples_g >= box_lo) & (samples_g <= box_hi), axis=1)]
    hits = []
    # samples lying exactly on the other surface bound the overlap region
    # and count as penetrating (coincident-contact case)
    if len(samples_o):
        ins, on = point_inside(gripper, samples_o, return_on_surface=True)
        hits.append(samples_o[ins | on])
    if len(samples_g):
        ins, on = point_inside(obj, samples_g, return_on_surface=True)
        hits.append(samples_g[ins | on])
    pts = np.concatenate(hits) if hits else np.empty((0, 3))
    if len(pts) == 0:
        return IntersectionResult(0, None)
    return IntersectionResult(len(pts), pts.mean(axis=0), pts if keep_points else None)


def closest_point_on_triangles(p: np.ndarray, tri_vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closest point to ``p`` on each triangle of a (t, 3, 3) array.

    Returns (points, squared distances). Vectorized region-based test.
    """
    a, b, c = tri_vertices[:, 0], tri_vertices[:, 1], tri_vertices[:, 2]
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    result = np.empty_like(a)
    done = np.zeros(len(a), dtype=bool)

    def assign(mask, value):
        m = mask & ~done
        result[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    assign((d1 <= 0) & (d2 <= 0), a)
    assign((d3 >= 0) & (d4 <= d3), b)
    assign((d6 >= 0) & (d5 <= d6), c)
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(np.abs(d1 - d3) > 0, d1 / (d1 - d3), 0.0)
    assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[:, None] * ab)
    vb = d5 * d2 - d1 * d6
    with np.errstate(divide="ignore", invalid="ignore"):
        w_ac = np.where(np.abs(d2 - d6) > 0, d2 / (d2 - d6), 0.0)
    assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac[:, None] * ac)
    va = d3 * d6 - d5 * d4
    denom_bc = (d4 - d3) + (d5 - d6)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_bc = np.where(np.abs(denom_bc) > 0, (d4 - d3) / denom_bc, 0.0)
    assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w_bc[:, None] * (c - b))
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
    assign(np.ones(len(a), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    d2_out = np.einsum("ij,ij->i", result - p, result - p)
    return result, d2_out


def project_to_inner_surface(mesh: TetMesh, p: np.ndarray) -> np.ndarray:
    """Closest point to ``p`` on the triangulated inner contact surface,
    in undeformed coordinates."""
    tris = mesh.inner_triangles()
    if len(tris) == 0:
        raise MeshError("mesh has no inner surface triangles")
    pts, d2 = closest_point_on_triangles(np.asarray(p, dtype=np.float64), mesh.vertices[tris])
    return pts[int(np.argmin(d2))]


# ---------------------------------------------------------------------------
# Mesh I/O: OFF (with a tet extension block) and OBJ

def save_off(path: str | Path, vertices: np.ndarray, triangles: np.ndarray,
             tets: np.ndarray | None = None) -> None:
    lines = ["OFF", f"{len(vertices)} {len(triangles)} 0"]
    lines += [f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}"
              for v in np.asarray(vertices, dtype=np.float64)]
    lines += [f"3 {t[0]} {t[1]} {t[2]}" for t in np.asarray(triangles, dtype=np.int64)]
    if tets is not None and len(tets):
        lines.append(f"#TETS {len(tets)}")
        lines += [f"{t[0]} {t[1]} {t[2]} {t[3]}" for t in np.asarray(tets, dtype=np.int64)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_off(path: str | Path) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Returns (vertices, triangles, tets-or-None)."""
    raw = Path(path).read_text().splitlines()
    tets = None
    tet_count = 0
    body = []
    for line in raw:
        s = line.strip()
        if s.startswith("#TETS"):
            tet_count = int(s.split()[1])
            tets = []
            continue
        if s.startswith("#") or not s:
            continue
        if tets is not None:
            tets.append([int(x) for x in s.split()])
            continue
        body.append(s)
    if body[0] != "OFF":
        raise MeshError(f"not an OFF file: {path}")
    nv, nf, _ = (int(x) for x in body[1].split())
    verts = np.array([[float(x) for x in body[2 + i].split()[:3]] for i in range(nv)])
    tris = []
    for i in range(nf):
        parts = [int(x) for x in body[2 + nv + i].split()]
        if parts[0] != 3:
            raise MeshError("only triangle faces supported")
        tris.append(parts[1:4])
    tris_arr = np.array(tris, dtype=np.int64) if tris else np.empty((0, 3), dtype=np.int64)
    tets_arr = None
    if tets is not None:
        tets_arr = np.array(tets, dtype=np.int64).reshape(-1, 4)
        if len(tets_arr) != tet_count:
            raise MeshError("tet extension block count mismatch")
    return verts, tris_arr, tets_arr


def save_obj(path: str | Path, vertices: np.ndarray, triangles: np.ndarray) -> None:
    lines = [f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}"
             for v in np.asarray(vertices, dtype=np.float64)]
    lines += [f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in np.asarray(triangles, dtype=np.int64)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    verts = []
    tris = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            for k in range(1, len(idx) - 1):
                tris.append([idx[0], idx[k], idx[k + 1]])
    return np.array(verts), np.array(tris, dtype=np.int64)
