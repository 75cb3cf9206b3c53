"""Ground-truth oracle and synthetic sensor.

Replaces the physical camera/robot testbed: a quasi-static penalty-contact
forward simulation produces true forces and deformations, and a synthetic
observation model renders noisy, occluded, rate-limited keypoint and pose
streams from them.

World frame: grasp center between the jaws at x = 0, +z up along the jaw
height, +y across the jaw width toward the camera side. Each jaw has its
own frame (origin at its base center, inner contact face toward the
object); the left jaw is axis-aligned with the world, the right jaw is
rotated half a turn about z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .contact_localizer import PoseTransform, look_at, rot_z, rotation_about
from .fem_core import MaterialModel, StiffnessSystem, assemble
from .fixtures import JawFixture, JawParams, ShapeSpec, canonical_jaw, generate_jaw, make_object_mesh, make_sdf
from .mesh_calibration import CameraModel, PointCloud, partial_view
from .mesh_model import SurfaceMesh


class ContactConvergenceError(RuntimeError):
    """Penalty fixed point failed to converge."""


@dataclass(frozen=True)
class NoiseConfig:
    keypoint_sigma: float = 0.001
    pose_rot_deg: float = 2.0
    pose_trans_sigma: float = 0.002
    confidence_visible: tuple[float, float] = (0.95, 0.02)
    confidence_occluded: tuple[float, float] = (0.2, 0.1)
    confidence_drift: tuple[float, float] = (0.9, 0.05)
    drift_background_prob: float = 0.3
    depth_sigma: float = 0.001

    @classmethod
    def ideal(cls) -> "NoiseConfig":
        return cls(keypoint_sigma=0.0, pose_rot_deg=0.0, pose_trans_sigma=0.0)


@dataclass(frozen=True)
class ContactModelConfig:
    """Penalty contact parameters for the forward oracle.

    ``model`` selects single-node contact at the deepest candidate
    ("point", identifiable by a point-force estimator) or penalty forces on
    every inner-surface node ("distributed"). ``viscous_gamma`` > 0 adds a
    slow stress-relaxation surrogate; ``hysteresis_gamma`` > 0 drops the
    truth force on the unloading branch (elastomer loop surrogate), both
    applied to the reported force only, never to the deformation.
    """

    stiffness: float = 1e6
    relaxation: float = 0.5
    tol: float = 1e-8
    max_iters: int = 200
    model: str = "point"
    viscous_gamma: float = 0.0
    viscous_tau: float = 25.0
    hysteresis_gamma: float = 0.0
    hysteresis_tau: float = 0.8


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "static"  # static | grasp
    plateaus_mm: tuple = (0, 2, 4, 6, 8, 10, 8, 6, 4, 2, 0)
    ramp_s: float = 0.2
    settle_s: float = 0.2
    record_s: float = 0.3
    cycles: int = 5
    closing_speed_mm_s: float = 1.0
    target_force: float = 5.0
    hold_s: float = 6.0
    release_threshold: float = 0.02
    max_closure_mm: float = 14.0


@dataclass(frozen=True)
class Scenario:
    """Everything a run needs: object, contact placement, schedule, sensor
    noise, occlusion mode, frame rates, and the seed."""

    shape: ShapeSpec = field(default_factory=ShapeSpec)
    contact_position: str = "middle"  # upper | middle | lower
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig.ideal)
    contact: ContactModelConfig = field(default_factory=ContactModelConfig)
    occlusion_mode: str = "off"  # off | confidence | drift
    camera_hz: float = 30.0
    pose_hz: float = 10.0
    seed: int = 0
    dual_jaw: bool = False
    gap: float = 0.048
    clearance_mm: float = 0.5
    object_yaw_deg: float = 0.0
    object_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    camera_eye: tuple[float, float, float] = (0.02, 0.09, 0.16)
    camera_target: tuple[float, float, float] = (0.0, 0.0, 0.045)
    material_e: float = 26e6
    material_nu: float = 0.48
    refine_oracle: bool = False

    def __post_init__(self):
        if self.camera_hz <= 0 or self.pose_hz <= 0:
            raise ValueError("frame rates must be positive")
        if self.contact_position not in ("upper", "middle", "lower"):
            raise ValueError(f"unknown contact position {self.contact_position!r}")

    def contact_height(self, jaw_height: float) -> float:
        frac = {"lower": 0.25, "middle": 0.50, "upper": 0.78}[self.contact_position]
        return frac * jaw_height


@dataclass
class Observation:
    """Per-frame synthetic sensor output in the camera frame."""

    timestamp: float
    keypoints: np.ndarray
    confidence: np.ndarray
    visible: np.ndarray
    reference: np.ndarray
    pose_sample: Optional[PoseTransform] = None


@dataclass
class JawTruth:
    force: np.ndarray  # on the jaw, jaw frame
    force_scalar: float  # component pressing into the inner surface
    candidate: int  # deepest-loaded candidate, -1 when free
    contact_point: Optional[np.ndarray]
    pose_jaw_from_obj: PoseTransform
    displacements: np.ndarray


@dataclass
class GroundTruthFrame:
    timestamp: float
    stage: str
    recording: bool
    closure: float
    jaws: tuple[JawTruth, ...]


@dataclass
class FramePacket:
    truth: GroundTruthFrame
    observations: tuple[Observation, ...]


@dataclass
class RunManifest:
    seed: int
    stage_times: dict
    n_frames: int
    camera_hz: float
    duration: float


@dataclass
class ScenarioResult:
    frames: list[FramePacket]
    manifest: RunManifest


# ---------------------------------------------------------------------------
# Forward contact oracle

class ForwardContactModel:
    """Quasi-static penalty contact for one jaw against an analytic SDF.

    Iterates force <-> deformation to a fixed point using precomputed
    unit-load displacement fields at the eligible contact nodes.
    """

    def __init__(self, system: StiffnessSystem, fixture: JawFixture,
                 cfg: ContactModelConfig):
        self.system = system
        self.fixture = fixture
        self.cfg = cfg
        if cfg.model == "point":
            self.node_ids = fixture.candidate_ids.copy()
        elif cfg.model == "distributed":
            self.node_ids = fixture.mesh.inner_surface_ids.copy()
        else:
            raise ValueError(f"unknown contact model {cfg.model!r}")
        fields = np.stack([system.point_load_field(v) for v in self.node_ids])
        self.fields = fields  # (n_e, n_v, 3, 3)
        self.self_compliance = fields[:, self.node_ids]  # (n_e, n_e, 3, 3)
        self.rest = fixture.mesh.vertices[self.node_ids]

    def _node_displacements(self, forces: np.ndarray) -> np.ndarray:
        return np.einsum("aibd,ad->ib", self.self_compliance, forces)

    def _implicit_normal_forces(self, eligible: np.ndarray, depth: np.ndarray,
                                normals: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Non-negative normal force magnitudes solving the linearized
        penalty equilibrium lam = k * depth(lam) on the eligible set."""
        k = self.cfg.stiffness
        idx = np.flatnonzero(eligible)
        if len(idx) == 0:
            return np.zeros_like(lam)
        n_sub = normals[idx]
        c_sub = self.self_compliance[np.ix_(idx, idx)]
        g = np.einsum("ab,abcd,cd->ac", n_sub, np.swapaxes(c_sub, 1, 2), n_sub)
        # depth at zero normal force under the local linear model
        d_free = depth[idx] + g @ lam[idx]
        active = d_free > 0.0
        lam_new = np.zeros(len(idx))
        for _ in range(40):
            if not active.any():
                break
            a = np.flatnonzero(active)
            m = g[np.ix_(a, a)] + np.eye(len(a)) / k
            sol = np.linalg.solve(m, d_free[a])
            lam_new[:] = 0.0
            lam_new[a] = sol
            if np.all(sol >= 0.0):
                # admit nodes the solution would push into penetration
                depth_pred = d_free - g @ lam_new
                violated = (~active) & (depth_pred > 1e-15)
                if not violated.any():
                    break
                active |= violated
            else:
                active[a[sol < 0.0]] = False
        lam_new = np.clip(lam_new, 0.0, None)
        out = np.zeros_like(lam)
        out[idx] = lam_new
        return out

    def solve(self, jaw_from_obj: PoseTransform,
              sdf: Callable, forces0: np.ndarray | None = None):
        """Returns (per-node forces, net force, contact point, candidate).

        Point mode loads only the candidate with the deepest undeformed
        penetration (lowest index on ties); distributed mode resolves
        penalty forces on every penetrating inner node.
        """
        cfg = self.cfg
        obj_from_jaw = jaw_from_obj.inverse()
        n = len(self.node_ids)
        d0, _ = sdf(obj_from_jaw.apply(self.rest))
        eligible = np.zeros(n, dtype=bool)
        if cfg.model == "point":
            if d0.min() < 0.0:
                eligible[int(np.argmin(d0))] = True
        else:
            eligible[d0 < 0.0] = True
        if not eligible.any():
            zero = np.zeros((n, 3))
            return zero, np.zeros(3), None, -1

        lam = np.zeros(n)
        if forces0 is not None:
            lam = np.linalg.norm(forces0, axis=1)
        normals = np.zeros((n, 3))
        converged = False
        for _ in range(cfg.max_iters):
            forces = lam[:, None] * normals
            disp = self._node_displacements(forces)
            pts_obj = obj_from_jaw.apply(self.rest + disp)
            d, normals_obj = sdf(pts_obj)
            depth = -d
            normals = normals_obj @ jaw_from_obj.rotation.T
            lam_target = self._implicit_normal_forces(eligible, depth, normals, lam)
            residual = float(np.abs(lam_target - lam).max())
            lam = lam + cfg.relaxation * (lam_target - lam)
            if residual < cfg.tol:
                converged = True
                break
        if not converged:
            raise ContactConvergenceError(
                f"penalty fixed point did not converge in {cfg.max_iters} iterations")
        forces = lam[:, None] * normals
        net = forces.sum(axis=0)
        candidate = -1
        contact_point = None
        if lam.max() > 0.0:
            disp = self._node_displacements(forces)
            pts = self.rest + disp
            contact_point = (pts * lam[:, None]).sum(axis=0) / lam.sum()
            loaded = int(np.argmax(lam))
            if self.cfg.model == "point":
                candidate = loaded
            else:
                candidate = int(np.argmin(
                    np.linalg.norm(self.fixture.candidate_positions
                                   - self.fixture.mesh.vertices[self.node_ids[loaded]],
                                   axis=1)))
        return forces, net, contact_point, candidate

    def full_displacement(self, forces: np.ndarray) -> np.ndarray:
        return np.einsum("avbd,ad->vb", self.fields, forces)


# ---------------------------------------------------------------------------
# Scene and engine

@dataclass
class JawRig:
    side: str  # "left" | "right"
    fixture: JawFixture
    system: StiffnessSystem
    contact_model: ForwardContactModel
    rot_world_from_jaw: np.ndarray
    base_offset: float  # |world x| of the jaw origin at zero closure

    def world_from_jaw(self, closure: float) -> PoseTransform:
        sign = -1.0 if self.side == "left" else 1.0
        t = np.array([sign * (self.base_offset - closure), 0.0, 0.0])
        return PoseTransform(self.rot_world_from_jaw, t, "g" + self.side[0], "w")


def _object_world_pose(scenario: Scenario, x_center: float, z_center: float) -> PoseTransform:
    rot = rot_z(math.radians(scenario.object_yaw_deg))
    t = np.array([x_center, 0.0, z_center]) + np.asarray(scenario.object_offset)
    return PoseTransform(rot, t, "o", "w")


_SYSTEM_CACHE: dict = {}
_CONTACT_CACHE: dict = {}


def cached_system(mesh, material: MaterialModel) -> StiffnessSystem:
    """Stiffness assembly/factorization cache; systems are immutable and
    shared freely across engines and jaws."""
    key = (id(mesh), material.youngs_modulus, material.poisson_ratio)
    if key not in _SYSTEM_CACHE:
        _SYSTEM_CACHE[key] = assemble(mesh, material)
    return _SYSTEM_CACHE[key]


def _cached_contact_model(system: StiffnessSystem, fixture: JawFixture,
                          cfg: ContactModelConfig) -> ForwardContactModel:
    """The unit-load fields depend only on the model kind; share them and
    clone the lightweight wrapper when penalty parameters differ."""
    key = (id(system), cfg.model)
    if key not in _CONTACT_CACHE:
        _CONTACT_CACHE[key] = ForwardContactModel(system, fixture, cfg)
    cached = _CONTACT_CACHE[key]
    if cached.cfg == cfg:
        return cached
    clone = ForwardContactModel.__new__(ForwardContactModel)
    clone.__dict__.update(cached.__dict__)
    clone.cfg = cfg
    return clone


class SimEngine:
    """Builds the scene for a scenario and steps ground truth plus
    synthetic observations under a commanded closure."""

    def __init__(self, scenario: Scenario, jaw_params: JawParams | None = None):
        self.scenario = scenario
        params = jaw_params or JawParams()
        if scenario.refine_oracle:
            fixture = generate_jaw(params.refined(2))
        else:
            fixture = canonical_jaw() if params == JawParams() else generate_jaw(params)
        material = MaterialModel(scenario.material_e, scenario.material_nu)
        self.material = material
        sides = ("left", "right") if scenario.dual_jaw else ("left",)
        self.rigs: list[JawRig] = []
        depth = fixture.params.depth
        for side in sides:
            system = cached_system(fixture.mesh, material)
            model = _cached_contact_model(system, fixture, scenario.contact)
            rot = np.eye(3) if side == "left" else rot_z(math.pi)
            self.rigs.append(JawRig(side, fixture, system, model, rot,
                                    scenario.gap / 2.0 + depth / 2.0))
        self.fixture = fixture
        self.object_mesh = make_object_mesh(scenario.shape)
        self.sdf = make_sdf(scenario.shape)
        self.camera_pose = look_at(np.asarray(scenario.camera_eye),
                                   np.asarray(scenario.camera_target))
        self.world_from_cam = self.camera_pose
        self.cam_from_world = self.camera_pose.inverse()
        self.z_contact = scenario.contact_height(fixture.params.height)
        self.rng = np.random.default_rng(np.random.SeedSequence(scenario.seed))
        self._prev_forces = [None for _ in self.rigs]
        self._rho = [0.0 for _ in self.rigs]  # viscous relaxation state
        self._unloading = 0.0  # smoothed unload-branch indicator
        self._branch = 0.0  # latched branch: 1 after unloading began
        self._prev_closure: Optional[float] = None
        self._object_x = self._initial_object_x()
        self._pose_frame_period = max(1, round(scenario.camera_hz / scenario.pose_hz))

    # -- object placement ---------------------------------------------------

    def _object_half_extent_x(self) -> float:
        rot = rot_z(math.radians(self.scenario.object_yaw_deg))
        x = self.object_mesh.vertices @ rot.T[:, 0]
        return float(max(x.max(), -x.min()))

    def _initial_object_x(self) -> float:
        sc = self.scenario
        if sc.dual_jaw:
            return 0.0
        # single jaw: object surface sits `clearance` from the untouched
        # inner face (which lies at world -gap/2 at zero closure)
        half = self._object_half_extent_x()
        return -sc.gap / 2.0 + sc.clearance_mm * 1e-3 + half

    # -- ground truth -------------------------------------------------------

    def _jaw_truth(self, idx: int, closure: float, object_x: float) -> JawTruth:
        rig = self.rigs[idx]
        sc = self.scenario
        world_from_jaw = rig.world_from_jaw(closure)
        world_from_obj = _object_world_pose(sc, object_x, self.z_contact)
        r = world_from_jaw.rotation.T @ world_from_obj.rotation
        t = world_from_jaw.rotation.T @ (world_from_obj.translation - world_from_jaw.translation)
        jaw_from_obj = PoseTransform(r, t, "o", "g")
        forces, net, contact_point, candidate = rig.contact_model.solve(
            jaw_from_obj, self.sdf, self._prev_forces[idx])
        self._prev_forces[idx] = forces
        disp = rig.contact_model.full_displacement(forces)
        return JawTruth(
            force=net,
            force_scalar=float(-net[0]),
            candidate=candidate,
            contact_point=contact_point,
            pose_jaw_from_obj=jaw_from_obj,
            displacements=disp,
        )

    def _net_object_force_x(self, closure: float, object_x: float) -> float:
        total = 0.0
        for idx, rig in enumerate(self.rigs):
            truth = self._jaw_truth(idx, closure, object_x)
            f_world = rig.rot_world_from_jaw @ truth.force
            total -= f_world[0]  # reaction on the object
        return total

    def _solve_object_equilibrium(self, closure: float) -> float:
        """Grasp-axis position where jaw reactions on the object balance
        (net force decreases as the object moves toward +x)."""
        x = self._object_x
        f = self._net_object_force_x(closure, x)
        if abs(f) <= 1e-7:
            return x
        # expand a bracket in the force direction; keeping steps small
        # avoids unphysical deep-overlap states where sdf normals flip
        step = 1e-4 if f > 0 else -1e-4
        a, fa = x, f
        b, fb = a, fa
        for _ in range(40):
            b = a + step
            fb = self._net_object_force_x(closure, b)
            if fa * fb <= 0.0:
                break
            a, fa = b, fb
            step *= 1.8
        else:
            return x
        for _ in range(100):
            mid = 0.5 * (a + b)
            fm = self._net_object_force_x(closure, mid)
            if abs(fm) <= 1e-7 or abs(b - a) < 1e-15:
                return mid
            if fa * fm <= 0.0:
                b, fb = mid, fm
            else:
                a, fa = mid, fm
        return 0.5 * (a + b)

    def step_truth(self, t: float, closure: float, stage: str = "",
                   recording: bool = False, dt: float | None = None) -> GroundTruthFrame:
        sc = self.scenario
        if sc.dual_jaw:
            self._object_x = self._solve_object_equilibrium(closure)
        jaws = tuple(self._jaw_truth(i, closure, self._object_x)
                     for i in range(len(self.rigs)))
        cfg = sc.contact
        if dt is not None and (cfg.viscous_gamma > 0.0 or cfg.hysteresis_gamma > 0.0):
            if self._prev_closure is not None:
                # the branch latches at constant displacement: an unload
                # curve stays below the load curve until loading resumes
                if closure < self._prev_closure - 1e-12:
                    self._branch = 1.0
                elif closure > self._prev_closure + 1e-12:
                    self._branch = 0.0
                self._unloading += dt * (self._branch - self._unloading) / cfg.hysteresis_tau
            self._prev_closure = closure
            jaws = tuple(self._apply_inelastic(i, jt, dt) for i, jt in enumerate(jaws))
        return GroundTruthFrame(t, stage, recording, closure, jaws)

    def _apply_inelastic(self, idx: int, jt: JawTruth, dt: float) -> JawTruth:
        """Surrogate non-elastic truth effects: slow stress relaxation and
        an unload-branch force drop. Deformation stays elastic."""
        cfg = self.scenario.contact
        in_contact = 1.0 if jt.candidate >= 0 else 0.0
        rho = self._rho[idx]
        rho += dt * (cfg.viscous_gamma * in_contact - rho) / cfg.viscous_tau
        self._rho[idx] = rho
        factor = (1.0 - rho) * (1.0 - cfg.hysteresis_gamma * self._unloading)
        force = factor * jt.force
        return replace(jt, force=force, force_scalar=float(-force[0]))

    # -- synthetic sensor ---------------------------------------------------

    def render_observation(self, truth: GroundTruthFrame, jaw_index: int) -> Observation:
        sc = self.scenario
        rig = self.rigs[jaw_index]
        jt = truth.jaws[jaw_index]
        noise = sc.noise
        rng = self.rng
        world_from_jaw = rig.world_from_jaw(truth.closure)
        kp_ids = rig.fixture.keypoint_ids
        kp_jaw = rig.fixture.mesh.vertices[kp_ids] + jt.displacements[kp_ids]
        kp_world = world_from_jaw.apply(kp_jaw)
        ref_world = world_from_jaw.apply(rig.fixture.mesh.vertices[rig.fixture.reference_id])
        cam_pos = self.world_from_cam.translation

        n_kp = len(kp_ids)
        occluded = np.zeros(n_kp, dtype=bool)
        drift_points = np.full((n_kp, 3), np.nan)
        if sc.occlusion_mode != "off":
            hit_t = np.full(n_kp, np.inf)
            origins = np.broadcast_to(cam_pos, (n_kp, 3))
            occluder_meshes = [( _object_world_pose(sc, self._object_x, self.z_contact),
                                 self.object_mesh)]
            for other in range(len(self.rigs)):
                if other == jaw_index:
                    continue
                other_rig = self.rigs[other]
                surf = SurfaceMesh(
                    other_rig.fixture.mesh.vertices + truth.jaws[other].displacements,
                    other_rig.fixture.mesh.surface().triangles)
                occluder_meshes.append((other_rig.world_from_jaw(truth.closure), surf))
            for world_from_frame, mesh in occluder_meshes:
                frame_from_world = world_from_frame.inverse()
                o_local = frame_from_world.apply(origins)
                t_local = frame_from_world.apply(kp_world)
                t_hit = mesh.bvh().first_hit_fraction(o_local, t_local, t_hi=1.0 - 1e-6)
                hit_t = np.minimum(hit_t, t_hit)
            occluded = np.isfinite(hit_t)
            drift_points = origins + hit_t[:, None] * (kp_world - origins)

        kp_cam = self.cam_from_world.apply(kp_world)
        ref_cam = self.cam_from_world.apply(ref_world)
        confidence = np.empty(n_kp)
        visible = ~occluded
        mu_v, sd_v = noise.confidence_visible
        confidence[:] = np.clip(mu_v + sd_v * rng.standard_normal(n_kp), 0.0, 1.0)
        if occluded.any():
            if sc.occlusion_mode == "confidence":
                mu_o, sd_o = noise.confidence_occluded
                confidence[occluded] = np.clip(
                    mu_o + sd_o * rng.standard_normal(int(occluded.sum())), 0.0, 1.0)
            else:  # drift: confidently wrong, surface hit or background
                mu_d, sd_d = noise.confidence_drift
                confidence[occluded] = np.clip(
                    mu_d + sd_d * rng.standard_normal(int(occluded.sum())), 0.0, 1.0)
                for k in np.flatnonzero(occluded):
                    if rng.random() < noise.drift_background_prob:
                        direction = kp_world[k] - cam_pos
                        direction = direction / np.linalg.norm(direction)
                        kp_cam[k] = self.cam_from_world.apply(cam_pos + 0.6 * direction)
                    else:
                        kp_cam[k] = self.cam_from_world.apply(drift_points[k])
        if noise.keypoint_sigma > 0.0:
            kp_cam = kp_cam + noise.keypoint_sigma * rng.standard_normal((n_kp, 3))
            ref_cam = ref_cam + 0.5 * noise.keypoint_sigma * rng.standard_normal(3)

        pose_sample = None
        frame_idx = int(round(truth.timestamp * sc.camera_hz))
        if frame_idx % self._pose_frame_period == 0:
            world_from_obj = _object_world_pose(sc, self._object_x, self.z_contact)
            cam_from_obj = PoseTransform(
                self.cam_from_world.rotation @ world_from_obj.rotation,
                self.cam_from_world.apply(world_from_obj.translation),
                "o", "c")
            if noise.pose_rot_deg > 0.0 or noise.pose_trans_sigma > 0.0:
                axis = rng.standard_normal(3)
                angle = math.radians(noise.pose_rot_deg) * rng.standard_normal()
                r_noise = rotation_about(axis, angle)
                t_noise = noise.pose_trans_sigma * rng.standard_normal(3)
                cam_from_obj = PoseTransform(
                    r_noise @ cam_from_obj.rotation,
                    cam_from_obj.translation + t_noise, "o", "c")
            pose_sample = cam_from_obj
        return Observation(
            timestamp=truth.timestamp,
            keypoints=kp_cam,
            confidence=confidence,
            visible=visible,
            reference=ref_cam,
            pose_sample=pose_sample,
        )

    def jaw_cam_rotation(self, jaw_index: int) -> np.ndarray:
        """Known jaw-from-camera rotation (rig geometry, camera mount)."""
        rig = self.rigs[jaw_index]
        return rig.rot_world_from_jaw.T @ self.world_from_cam.rotation

    def frame(self, t: float, closure: float, stage: str = "",
              recording: bool = False, dt: float | None = None) -> FramePacket:
        truth = self.step_truth(t, closure, stage, recording, dt)
        obs = tuple(self.render_observation(truth, i) for i in range(len(self.rigs)))
        return FramePacket(truth, obs)


# ---------------------------------------------------------------------------
# Schedules

def static_profile(schedule: ScheduleConfig, camera_hz: float):
    """(time, closure, stage, recording) tuples for the plateau cycles."""
    dt = 1.0 / camera_hz
    seq = []
    plateaus = [p * 1e-3 for p in schedule.plateaus_mm]
    t = 0.0
    prev = 0.0
    for cycle in range(schedule.cycles):
        peak = max(plateaus)
        seen_peak = False
        for i, target in enumerate(plateaus):
            if target == peak:
                seen_peak = True
            if target == 0.0:
                stage = "pre" if not seen_peak else "post"
            else:
                stage = "load" if not seen_peak or target == peak else "unload"
            n_ramp = max(1, round(schedule.ramp_s * camera_hz))
            for k in range(n_ramp):
                alpha = (k + 1) / n_ramp
                seq.append((t, prev + alpha * (target - prev), stage, False))
                t += dt
            for k in range(max(0, round(schedule.settle_s * camera_hz))):
                seq.append((t, target, stage, False))
                t += dt
            for k in range(max(1, round(schedule.record_s * camera_hz))):
                seq.append((t, target, stage, True))
                t += dt
            prev = target
    return seq


def run_scenario(scenario: Scenario, engine: SimEngine | None = None,
                 packet_hook: Callable[[int, FramePacket], None] | None = None,
                 keep_frames: bool | None = None) -> ScenarioResult:
    """Execute the scenario schedule.

    ``packet_hook`` receives each frame as it is produced (streaming
    consumers); ``keep_frames`` defaults to False when a hook is given so
    long runs do not hold every displacement field in memory.
    """
    eng = engine or SimEngine(scenario)
    sched = scenario.schedule
    dt = 1.0 / scenario.camera_hz
    if keep_frames is None:
        keep_frames = packet_hook is None
    frames: list[FramePacket] = []
    n_frames = 0

    def emit(pkt: FramePacket) -> None:
        nonlocal n_frames
        if packet_hook is not None:
            packet_hook(n_frames, pkt)
        if keep_frames:
            frames.append(pkt)
        n_frames += 1

    stage_times: dict = {}
    if sched.kind == "static":
        profile = static_profile(sched, scenario.camera_hz)
        transitions = []
        last_stage = None
        for t, closure, stage, recording in profile:
            if stage != last_stage:
                transitions.append((t, stage))
                last_stage = stage
            emit(eng.frame(t, closure, stage, recording, dt))
        stage_times["transitions"] = transitions
        duration = profile[-1][0] + dt if profile else 0.0
    elif sched.kind == "grasp":
        speed = sched.closing_speed_mm_s * 1e-3
        max_closure = sched.max_closure_mm * 1e-3
        closure = 0.0
        t = 0.0
        phase = "pre"
        hold_until = np.inf
        while True:
            truth = eng.step_truth(t, closure, phase, True, dt)
            grasp = min(j.force_scalar for j in truth.jaws)
            if phase == "pre" and grasp > sched.release_threshold:
                phase = "load"
                stage_times["stage1"] = t
            if phase in ("pre", "load") and (grasp >= sched.target_force
                                             or closure >= max_closure):
                phase = "hold"
                stage_times["stage2"] = t
                hold_until = t + sched.hold_s
            elif phase == "hold" and t >= hold_until:
                phase = "unload"
                stage_times["stage3"] = t
            elif phase == "unload" and grasp <= sched.release_threshold:
                phase = "post"
                stage_times["stage4"] = t
            truth = replace(truth, stage=phase)
            obs = tuple(eng.render_observation(truth, i) for i in range(len(eng.rigs)))
            emit(FramePacket(truth, obs))
            if phase in ("pre", "load"):
                closure += speed * dt
            elif phase in ("unload", "post"):
                closure = max(0.0, closure - speed * dt)
            t += dt
            if phase == "post" and closure == 0.0:
                break
            if t > 600.0:
                raise RuntimeError("grasp schedule failed to terminate")
        duration = t
    else:
        raise ValueError(f"unknown schedule kind {sched.kind!r}")
    manifest = RunManifest(
        seed=scenario.seed,
        stage_times=stage_times,
        n_frames=n_frames,
        camera_hz=scenario.camera_hz,
        duration=duration,
    )
    return ScenarioResult(frames, manifest)


# ---------------------------------------------------------------------------
# Synthetic scans for the calibration pipeline

def synthetic_scan(mesh: SurfaceMesh, camera: CameraModel, depth_sigma: float = 0.001,
                   seed: int = 0) -> PointCloud:
    """Partial-view scan of a mesh posed in the camera frame with range
    noise along each viewing ray."""
    pv = partial_view(mesh, camera)
    pts = pv.points
    if depth_sigma > 0.0:
        rng = np.random.default_rng(seed)
        ranges = np.linalg.norm(pts, axis=1, keepdims=True)
        rays = pts / ranges
        pts = pts + rays * (depth_sigma * rng.standard_normal((len(pts), 1)))
    return PointCloud(pts)
