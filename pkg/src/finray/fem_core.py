"""Linear-elastic tetrahedral FEM: stiffness assembly over free DOFs,
cached factorization, and precomputation of the compliance operators the
inverse force solver consumes.

Small-strain linear elements keep the compliance maps constant, which is
what the inverse objective requires. Dense Cholesky below 2000 free DOFs,
sparse LU above (the refined oracle mesh).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .mesh_model import DeformedState, TetMesh, tet_volumes


class SolveError(RuntimeError):
    """Singular or infeasible linear system."""


DENSE_DOF_CUTOFF = 2000


@dataclass(frozen=True)
class MaterialModel:
    """Isotropic linear elasticity constants."""

    youngs_modulus: float = 26e6  # Pa, TPU-like default
    poisson_ratio: float = 0.48

    def __post_init__(self):
        if self.youngs_modulus <= 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must be in [0, 0.5)")

    def elasticity_matrix(self) -> np.ndarray:
        """6x6 isotropic elasticity in Voigt order (xx, yy, zz, xy, yz, zx)
        with engineering shear strains."""
        e, nu = self.youngs_modulus, self.poisson_ratio
        lam = e * nu / ((1 + nu) * (1 - 2 * nu))
        mu = e / (2 * (1 + nu))
        d = np.zeros((6, 6))
        d[:3, :3] = lam
        d[np.arange(3), np.arange(3)] = lam + 2 * mu
        d[np.arange(3, 6), np.arange(3, 6)] = mu
        return d


def element_stiffnesses(vertices: np.ndarray, tets: np.ndarray,
                        material: MaterialModel) -> np.ndarray:
    """Per-element 12x12 stiffness matrices, vectorized over all tets."""
    v = vertices[tets]
    edges = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)  # (t, 3, 3), columns are edges
    vols = np.linalg.det(edges) / 6.0
    if np.any(vols <= 0):
        raise SolveError("inverted tet encountered during assembly")
    inv = np.linalg.inv(edges)
    grads = np.empty((len(tets), 4, 3))
    grads[:, 1:] = inv  # rows of the inverse are the shape gradients
    grads[:, 0] = -inv.sum(axis=1)
    b = np.zeros((len(tets), 6, 12))
    for node in range(4):
        gx, gy, gz = grads[:, node, 0], grads[:, node, 1], grads[:, node, 2]
        c = 3 * node
        b[:, 0, c + 0] = gx
        b[:, 1, c + 1] = gy
        b[:, 2, c + 2] = gz
        b[:, 3, c + 0] = gy
        b[:, 3, c + 1] = gx
        b[:, 4, c + 1] = gz
        b[:, 4, c + 2] = gy
        b[:, 5, c + 0] = gz
        b[:, 5, c + 2] = gx
    d = material.elasticity_matrix()
    ke = np.einsum("tia,ij,tjb->tab", b, d, b)
    return ke * vols[:, None, None]


class StiffnessSystem:
    """Assembled stiffness with fixed DOFs eliminated and a cached
    factorization. Immutable after construction; concurrent solves against
    the factorization are safe."""

    def __init__(self, mesh: TetMesh, material: MaterialModel):
        if len(mesh.fixed_vertex_ids) == 0:
            raise SolveError("empty fixed set leaves the system singular")
        self.mesh = mesh
        self.material = material
        ke = element_stiffnesses(mesh.vertices, mesh.tets, material)
        n_dof = 3 * mesh.n_vertices
        dof = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(len(mesh.tets), 12)
        rows = np.repeat(dof, 12, axis=1).ravel()
        cols = np.tile(dof, (1, 12)).ravel()
        k_full = scipy.sparse.coo_matrix((ke.ravel(), (rows, cols)),
                                         shape=(n_dof, n_dof)).tocsr()
        self.k_full = k_full

        free_mask = np.ones(mesh.n_vertices, dtype=bool)
        free_mask[mesh.fixed_vertex_ids] = False
        self.free_vertices = np.flatnonzero(free_mask)
        self.free_dofs = (3 * self.free_vertices[:, None] + np.arange(3)).ravel()
        self.n_free = len(self.free_dofs)
        k_ff = k_full[self.free_dofs][:, self.free_dofs]

        self._dense: Optional[tuple] = None
        self._sparse_lu = None
        if self.n_free <= DENSE_DOF_CUTOFF:
            try:
                self._dense = scipy.linalg.cho_factor(k_ff.toarray(), lower=True)
            except scipy.linalg.LinAlgError as exc:
                raise SolveError(f"stiffness not positive definite: {exc}") from exc
        else:
            self._sparse_lu = scipy.sparse.linalg.splu(k_ff.tocsc())

    def solve_free(self, rhs: np.ndarray) -> np.ndarray:
        """Solve K_ff u = rhs for one or more right-hand sides."""
        if self._dense is not None:
            return scipy.linalg.cho_solve(self._dense, rhs)
        if rhs.ndim == 1:
            return self._sparse_lu.solve(rhs)
        return np.column_stack([self._sparse_lu.solve(rhs[:, i]) for i in range(rhs.shape[1])])

    def solve_displacement(self, loads: np.ndarray) -> DeformedState:
        """Displacement under per-vertex loads; loads on fixed vertices must
        be zero (they are reaction-supported, not free)."""
        loads = np.asarray(loads, dtype=np.float64)
        if loads.shape != (self.mesh.n_vertices, 3):
            raise SolveError("loads must be (n_vertices, 3)")
        if np.any(loads[self.mesh.fixed_vertex_ids] != 0.0):
            raise SolveError("nonzero load on fixed vertices")
        u = np.zeros_like(loads)
        u_free = self.solve_free(loads.ravel()[self.free_dofs])
        u.ravel()[self.free_dofs] = u_free
        return DeformedState(u)

    def point_load_field(self, vertex_id: int) -> np.ndarray:
        """(n_vertices, 3, 3) displacement fields for unit loads along each
        axis at one vertex: field[:, :, d] is the response to axis d."""
        cols = np.flatnonzero(np.isin(self.free_dofs, 3 * vertex_id + np.arange(3)))
        if len(cols) != 3:
            raise SolveError(f"vertex {vertex_id} is fixed; no compliance column")
        rhs = np.zeros((self.n_free, 3))
        rhs[cols, np.arange(3)] = 1.0
        u_free = self.solve_free(rhs)
        field = np.zeros((self.mesh.n_vertices * 3, 3))
        field[self.free_dofs] = u_free
        return field.reshape(self.mesh.n_vertices, 3, 3)

    def strain_energy(self, state: DeformedState) -> float:
        u = state.displacements.ravel()
        return float(0.5 * u @ (self.k_full @ u))


def assemble(mesh: TetMesh, material: MaterialModel) -> StiffnessSystem:
    return StiffnessSystem(mesh, material)


class ComplianceOperators:
    """Precomputed unit-load responses for every contact candidate.

    ``w_ea[i]`` maps a force at candidate i to effector displacement
    components (3E x 3); ``w_aa[i]`` is the candidate's own 3x3 compliance.
    Full displacement fields are kept so deformation reconstruction is a
    single matrix-vector product.
    """

    def __init__(self, system: StiffnessSystem, effector_ids: np.ndarray,
                 candidate_ids: np.ndarray):
        effector_ids = np.asarray(effector_ids, dtype=np.int64)
        candidate_ids = np.asarray(candidate_ids, dtype=np.int64)
        n_v = system.mesh.n_vertices
        for ids, name in ((effector_ids, "effector"), (candidate_ids, "candidate")):
            if ids.min(initial=0) < 0 or ids.max(initial=-1) >= n_v:
                raise SolveError(f"{name} id out of range")
        self.effector_ids = effector_ids
        self.candidate_ids = candidate_ids
        fields = np.stack([system.point_load_field(c) for c in candidate_ids])
        self.fields = fields  # (n_c, n_v, 3, 3)
        self.w_ea = fields[:, effector_ids].reshape(len(candidate_ids), -1, 3)
        self.w_aa = fields[np.arange(len(candidate_ids)), candidate_ids]

    @property
    def n_candidates(self) -> int:
        return len(self.candidate_ids)

    @property
    def n_effectors(self) -> int:
        return len(self.effector_ids)


def precompute_compliance(system: StiffnessSystem, effector_ids: np.ndarray,
                          candidate_ids: np.ndarray) -> ComplianceOperators:
    return ComplianceOperators(system, effector_ids, candidate_ids)
