"""End-user entry point: fixture generation, mesh calibration, scenario
execution, the evaluation suites (static grid, actuator ablation, dual-jaw
grasp analog, speed sweep, force-threshold grasping), per-candidate
regularization tuning, and report emission.

Every suite writes per-run CSVs plus a JSON/markdown report into the
output directory; reports are pure functions of the CSVs so runs can be
re-scored without re-simulation. Exit status is nonzero when a suite's
pattern assertions fail.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod
from .fem_core import MaterialModel
from .fixtures import JawParams, ShapeSpec, canonical_jaw, generate_jaw, save_fixture
from .inverse_solver import ContactCandidateSet, EffectorSet, solve
from .mesh_calibration import CameraModel, calibrate, chamfer_distance, load_point_cloud
from .mesh_model import load_obj, load_off, save_obj, save_off, SurfaceMesh
from .metrics_force import (
    ConditionMetrics,
    MetricsReport,
    NORMALIZATION_RANGE_N,
    ThresholdTrigger,
    rmse_nrmsd,
)
from .pipeline import EstimatorSettings, JawEstimator, RunResult, cached_compliance, run_estimation
from .sensing_sim import (
    ContactModelConfig,
    NoiseConfig,
    Scenario,
    ScheduleConfig,
    SimEngine,
    cached_system,
)

POSITIONS = ("upper", "middle", "lower")
DIAMETERS_MM = (15, 25, 35)
FORCE_LEVELS = {"L": 2.0, "M": 5.0, "H": 9.0}

_EPSILON_FILE = Path(__file__).parent / "data" / "epsilon_schedule.cfg"


def thread_count() -> int:
    return max(1, int(os.environ.get("FINRAY_THREADS", "1")))


def load_epsilon_schedule(path: str | Path | None = None) -> tuple | None:
    """Tuned per-candidate regularization weights, or None when untuned."""
    p = Path(path) if path else _EPSILON_FILE
    if not p.exists():
        return None
    raw = cfgmod.section(cfgmod.load_config(p), "epsilon")
    return tuple(float(raw[str(i)]) for i in range(len(raw)))


def candidate_for_position(position: str) -> int:
    """Candidate index nearest the nominal contact height."""
    fixture = canonical_jaw()
    z = Scenario(contact_position=position).contact_height(fixture.params.height)
    return int(np.argmin(np.abs(fixture.candidate_positions[:, 2] - z)))


# ---------------------------------------------------------------------------
# Scenario construction

def default_noisy_scenario(**kw) -> Scenario:
    base = dict(
        noise=NoiseConfig(),
        occlusion_mode="confidence",
        contact=ContactModelConfig(model="distributed"),
    )
    base.update(kw)
    return Scenario(**base)


def default_ideal_scenario(**kw) -> Scenario:
    base = dict(
        noise=NoiseConfig.ideal(),
        occlusion_mode="off",
        contact=ContactModelConfig(model="point"),
    )
    base.update(kw)
    return Scenario(**base)


def shape_from_mapping(m: dict) -> ShapeSpec:
    kind = m.get("kind", "cylinder")
    if kind == "cylinder":
        return ShapeSpec.cylinder(m.get("diameter_mm", 15.0) * 1e-3,
                                  m.get("length_mm", 80.0) * 1e-3)
    if kind == "cuboid":
        size = m.get("size_mm", (30.0, 80.0, 30.0))
        return ShapeSpec.cuboid(tuple(s * 1e-3 for s in size))
    if kind == "wedge":
        return ShapeSpec.wedge(
            m.get("half_width_bottom_mm", 16.0) * 1e-3,
            m.get("half_width_top_mm", 8.0) * 1e-3,
            m.get("height_mm", 50.0) * 1e-3,
            m.get("length_mm", 80.0) * 1e-3)
    raise cfgmod.ConfigError(f"unknown shape kind {kind!r}")


def scenario_from_config(mapping: dict, seed: int | None = None) -> tuple[Scenario, EstimatorSettings]:
    shape = shape_from_mapping(cfgmod.section(mapping, "shape"))
    schedule = cfgmod.apply_mapping(ScheduleConfig(), cfgmod.section(mapping, "schedule"))
    noise = cfgmod.apply_mapping(NoiseConfig(), cfgmod.section(mapping, "noise"))
    contact = cfgmod.apply_mapping(ContactModelConfig(), cfgmod.section(mapping, "contact"))
    scen_kw = cfgmod.section(mapping, "scenario")
    scenario = Scenario(shape=shape, schedule=schedule, noise=noise, contact=contact)
    scenario = cfgmod.apply_mapping(scenario, scen_kw)
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    solver_kw = cfgmod.section(mapping, "solver")
    settings = cfgmod.apply_mapping(EstimatorSettings(), solver_kw)
    if settings.epsilons is None:
        tuned = load_epsilon_schedule()
        if tuned is not None:
            settings = replace(settings, epsilons=tuned)
    return scenario, settings


# ---------------------------------------------------------------------------
# Cycle splitting and per-run scoring

def split_cycles(result: RunResult, jaw: int = 0):
    """(sim, gt) recorded series per schedule cycle."""
    sched = result.scenario.schedule
    frames = [r for r in result.frames if r["jaw"] == jaw]
    per_cycle = len(frames) // sched.cycles
    sims, gts = [], []
    for c in range(sched.cycles):
        chunk = frames[c * per_cycle:(c + 1) * per_cycle]
        sim = np.array([r["f_sim_n"] for r in chunk if r["recording"]])
        gt = np.array([r["f_gt_n"] for r in chunk if r["recording"]])
        sims.append(sim)
        gts.append(gt)
    return sims, gts


def _run_cell(args):
    scenario, settings = args
    return run_estimation(scenario, settings)


def run_grid(cells: dict, settings_for: dict) -> dict:
    """Run labeled scenarios, optionally across a thread pool; results come
    back in label-sorted order."""
    labels = sorted(cells)
    jobs = [(cells[k], settings_for[k]) for k in labels]
    n = thread_count()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    return dict(zip(labels, results))


# ---------------------------------------------------------------------------
# Suites

def suite_static(out_dir: Path, seed: int = 0, ideal: bool = False,
                 cycles: int = 5, quick: bool = False) -> tuple[MetricsReport, bool]:
    """3 diameters x 3 positions x N cycles; Table-style report with
    load/unload split."""
    out_dir.mkdir(parents=True, exist_ok=True)
    schedule = ScheduleConfig(kind="static", cycles=cycles,
                              ramp_s=0.2, settle_s=0.2, record_s=0.3)
    if quick:
        schedule = replace(schedule, plateaus_mm=(0, 4, 10, 4, 0))
    cells = {}
    settings_for = {}
    tuned = load_epsilon_schedule()
    for pos in POSITIONS:
        for d in DIAMETERS_MM:
            label = f"{pos}-d{d}"
            shape = ShapeSpec.cylinder(d * 1e-3)
            if ideal:
                cells[label] = default_ideal_scenario(
                    shape=shape, contact_position=pos, schedule=schedule, seed=seed)
                settings_for[label] = EstimatorSettings(mount_mode="matched", epsilons=0.0)
            else:
                cells[label] = default_noisy_scenario(
                    shape=shape, contact_position=pos, schedule=schedule, seed=seed,
                    contact=ContactModelConfig(model="distributed", viscous_gamma=0.25,
                                               viscous_tau=8.0))
                settings_for[label] = EstimatorSettings(epsilons=tuned)
    results = run_grid(cells, settings_for)
    conditions = []
    ok = True
    for label, res in results.items():
        res.to_csv(out_dir / f"static-{label}.csv")
        res.write_manifest(out_dir / f"static-{label}.manifest.json")
        sims, gts = split_cycles(res)
        stage = res.column("stage")
        rec = res.recorded_mask()
        extra = {}
        for phase in ("load", "unload"):
            m = rec & (stage == phase)
            if m.any():
                r, _ = rmse_nrmsd(res.column("f_sim_n")[m], res.column("f_gt_n")[m])
                extra[f"rmse_{phase}"] = r
        cm = ConditionMetrics.from_cycles(label, sims, gts, **extra)
        conditions.append(cm)
        if ideal and cm.rmse_mean > 1e-5:
            ok = False
    report = MetricsReport("static" + ("-ideal" if ideal else ""), conditions,
                           notes={"seed": seed, "ideal": ideal})
    _write_report(out_dir, report)
    return report, ok


def suite_ablation(out_dir: Path, seeds=(0, 1, 2, 3, 4),
                   quick: bool = False) -> tuple[MetricsReport, bool]:
    """15 mm cylinder at three real positions; four actuator configs:
    fixed at each position plus the contact estimator."""
    out_dir.mkdir(parents=True, exist_ok=True)
    schedule = ScheduleConfig(kind="static", cycles=1, ramp_s=0.2, settle_s=0.2,
                              record_s=0.3)
    if quick:
        schedule = replace(schedule, plateaus_mm=(0, 4, 10, 4, 0))
    tuned = load_epsilon_schedule()
    fixed_idx = {p: candidate_for_position(p) for p in POSITIONS}
    table: dict[str, dict[str, list[float]]] = {
        p: {c: [] for c in ("estimator", *POSITIONS)} for p in POSITIONS}
    for seed in seeds:
        cells = {}
        settings_for = {}
        for real in POSITIONS:
            shape = ShapeSpec.cylinder(0.015)
            base = default_noisy_scenario(
                shape=shape, contact_position=real, schedule=schedule, seed=seed,
                contact=ContactModelConfig(model="point"))
            cells[f"{real}|estimator"] = base
            settings_for[f"{real}|estimator"] = EstimatorSettings(
                mount_mode="estimator", epsilons=tuned)
            for sim_pos in POSITIONS:
                cells[f"{real}|{sim_pos}"] = base
                settings_for[f"{real}|{sim_pos}"] = EstimatorSettings(
                    mount_mode="fixed", fixed_index=fixed_idx[sim_pos], epsilons=tuned)
        results = run_grid(cells, settings_for)
        for label, res in results.items():
            real, cfg = label.split("|")
            rec = res.recorded_mask()
            r, _ = rmse_nrmsd(res.column("f_sim_n")[rec], res.column("f_gt_n")[rec])
            table[real][cfg].append(r)
            res.to_csv(out_dir / f"ablation-{real}-{cfg}-s{seed}.csv")
    conditions = []
    ok = True
    for real in POSITIONS:
        row = {}
        for cfg in ("estimator", *POSITIONS):
            vals = np.array(table[real][cfg])
            row[cfg] = vals
            conditions.append(ConditionMetrics(
                f"real={real}|sim={cfg}", float(vals.mean()), float(vals.std()),
                float(vals.mean() / NORMALIZATION_RANGE_N * 100.0),
                float(vals.std() / NORMALIZATION_RANGE_N * 100.0),
                float(vals.max()), len(vals)))
        matched = row[real]
        for seed_i in range(len(seeds)):
            if row["estimator"][seed_i] > 1.5 * matched[seed_i]:
                ok = False
            for other in POSITIONS:
                if other != real and row[other][seed_i] < 3.0 * matched[seed_i]:
                    ok = False
    report = MetricsReport("ablation", conditions,
                           notes={"seeds": list(seeds), "pattern_ok": ok})
    _write_report(out_dir, report)
    return report, ok


def _onrobot_grid(quick: bool):
    shapes = {
        "cyl25": ShapeSpec.cylinder(0.025),
        "cube30": ShapeSpec.cuboid((0.030, 0.080, 0.030)),
        "asym": ShapeSpec.wedge(),
    }
    if quick:
        return shapes, ("middle",), ("M",), 1
    return shapes, POSITIONS, tuple(FORCE_LEVELS), 5


def suite_onrobot(out_dir: Path, seed: int = 0, quick: bool = False) -> tuple[MetricsReport, bool]:
    """Dual-jaw grasp analog: three objects, contact positions, and force
    plateaus; the wedge's sloped face shifts contact during closure."""
    out_dir.mkdir(parents=True, exist_ok=True)
    shapes, positions, levels, repeats = _onrobot_grid(quick)
    tuned = load_epsilon_schedule()
    conditions = []
    ok = True
    for shape_name, shape in shapes.items():
        for pos in positions:
            for lvl in levels:
                sims, gts, extras = [], [], {}
                for rep in range(repeats):
                    scenario = default_noisy_scenario(
                        shape=shape, contact_position=pos, seed=seed * 997 + rep,
                        dual_jaw=True,
                        schedule=ScheduleConfig(
                            kind="grasp", closing_speed_mm_s=4.0,
                            target_force=FORCE_LEVELS[lvl], hold_s=2.0),
                        contact=ContactModelConfig(model="point"))
                    res = run_estimation(scenario, EstimatorSettings(epsilons=tuned))
                    label = f"{shape_name}-{pos}-{lvl}-r{rep}"
                    res.to_csv(out_dir / f"onrobot-{label}.csv")
                    res.write_manifest(out_dir / f"onrobot-{label}.manifest.json")
                    grasp_sim = res.column("grasp_sim")
                    grasp_gt = res.column("grasp_gt")
                    in_run = np.isfinite(grasp_sim)
                    sims.append(grasp_sim[in_run])
                    gts.append(grasp_gt[in_run])
                    stages = res.column("stage")
                    load_m = in_run & (stages == "load")
                    if load_m.any():
                        r_load, _ = rmse_nrmsd(grasp_sim[load_m], grasp_gt[load_m])
                        extras.setdefault("rmse_load", []).append(r_load)
                    if shape_name == "asym":
                        mounted = res.column("mounted")
                        contact = res.column("true_candidate") >= 0
                        n_shift = len(set(mounted[contact].tolist()))
                        extras.setdefault("mount_shifts", []).append(n_shift)
                        if n_shift < 2:
                            ok = False
                cm = ConditionMetrics.from_cycles(
                    f"{shape_name}-{pos}-{lvl}", sims, gts,
                    **{k: float(np.mean(v)) for k, v in extras.items()})
                conditions.append(cm)
    report = MetricsReport("onrobot", conditions, notes={"seed": seed, "quick": quick})
    _write_report(out_dir, report)
    return report, ok


def suite_sweep(out_dir: Path, seed: int = 0,
                speeds_mm_s=(0.5, 1.0, 2.0, 4.0, 8.0)) -> tuple[MetricsReport, bool]:
    """Closing-speed sweep at one force level; reports onset delay and
    accuracy per speed."""
    out_dir.mkdir(parents=True, exist_ok=True)
    tuned = load_epsilon_schedule()
    conditions = []
    for v in speeds_mm_s:
        scenario = default_noisy_scenario(
            shape=ShapeSpec.cylinder(0.025), contact_position="middle",
            dual_jaw=True, seed=seed,
            schedule=ScheduleConfig(kind="grasp", closing_speed_mm_s=v,
                                    target_force=5.0, hold_s=1.0),
            contact=ContactModelConfig(model="point"))
        res = run_estimation(scenario, EstimatorSettings(epsilons=tuned))
        res.to_csv(out_dir / f"sweep-v{v}.csv")
        grasp_sim = res.column("grasp_sim")
        grasp_gt = res.column("grasp_gt")
        t = res.column("t")
        valid = np.isfinite(grasp_sim)
        onset_gt = t[valid][np.argmax(grasp_gt[valid] > 0.05)] if (grasp_gt[valid] > 0.05).any() else np.nan
        onset_sim = t[valid][np.argmax(grasp_sim[valid] > 0.05)] if (grasp_sim[valid] > 0.05).any() else np.nan
        r, n = rmse_nrmsd(grasp_sim[valid], grasp_gt[valid])
        conditions.append(ConditionMetrics(
            f"speed-{v}mm_s", r, 0.0, n, 0.0, float(np.abs(grasp_sim[valid] - grasp_gt[valid]).max()),
            1, extra={"onset_delay_s": float(onset_sim - onset_gt)}))
    report = MetricsReport("sweep", conditions, notes={"seed": seed})
    _write_report(out_dir, report)
    return report, True


def suite_chip(out_dir: Path, seed: int = 0, thresholds=(1.0, 2.0, 3.0, 4.0, 5.0),
               speed_mm_s: float = 4.0) -> tuple[dict, bool]:
    """Force-threshold grasping: close until the estimated grasp force
    crosses each threshold, then hold; stop latency is one frame."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    ok = True
    for thr in thresholds:
        scenario = default_ideal_scenario(
            shape=ShapeSpec.cylinder(0.025), contact_position="middle",
            dual_jaw=True, seed=seed,
            schedule=ScheduleConfig(kind="grasp", closing_speed_mm_s=speed_mm_s,
                                    target_force=1e9, max_closure_mm=12.0))
        engine = SimEngine(scenario)
        # noiseless run: regularization off so the trigger sees the
        # unbiased estimate
        estimators = [JawEstimator(engine, i, EstimatorSettings(epsilons=0.0))
                      for i in range(2)]
        trigger = ThresholdTrigger(thr)
        dt = 1.0 / scenario.camera_hz
        closure = 0.0
        t = 0.0
        speed = speed_mm_s * 1e-3
        history = []
        fired_frame = None
        for k in range(1200):
            pkt = engine.frame(t, closure, "grasp", True, dt)
            scalars = [estimators[i].step(pkt.observations[i], t,
                                          pkt.truth.jaws[i].candidate).scalar
                       for i in range(2)]
            grasp_est = min(abs(s) for s in scalars)
            grasp_true = min(j.force_scalar for j in pkt.truth.jaws)
            history.append((t, grasp_est, grasp_true))
            if trigger.update(grasp_est) and fired_frame is None:
                fired_frame = k
            if fired_frame is None:
                closure += speed * dt
            t += dt
            if fired_frame is not None and k >= fired_frame + 15:
                break
        h = np.array(history)
        if fired_frame is None:
            ok = False
            rows.append({"threshold": thr, "fired": False})
            continue
        pre = h[max(0, fired_frame - 1), 1]
        peak = h[fired_frame:, 2].max()
        increment = np.diff(h[:fired_frame + 1, 2]).max() if fired_frame > 0 else 0.0
        overshoot = peak - thr
        rows.append({"threshold": thr, "fired": True, "fire_time": h[fired_frame, 0],
                     "peak_true": float(peak), "overshoot": float(overshoot),
                     "max_frame_increment": float(increment)})
        if pre >= thr or overshoot > increment + 0.25:
            ok = False
    (out_dir / "chip.json").write_text(json.dumps({"rows": rows}, indent=2, sort_keys=True) + "\n")
    return {"rows": rows}, ok


def tune_epsilon(out_dir: Path, seed: int = 0, n_trials: int = 150,
                 noise_sigma: float = 0.001, max_displacement: float = 0.010,
                 eps_grid=None) -> Path:
    """Per-candidate line search minimizing round-trip force error on
    noisy single-point-load scenes; writes the schedule file.

    Trial force magnitudes span each candidate's working range: up to the
    force that displaces it by ``max_displacement`` along the grasp axis
    (the stiffer base candidates legitimately see far larger loads).
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    fixture = canonical_jaw()
    system = cached_system(fixture.mesh, MaterialModel())
    ops = cached_compliance(system, fixture.keypoint_ids, fixture.candidate_ids)
    if eps_grid is None:
        eps_grid = [0.0] + list(np.logspace(-7, -2, 14))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_c = len(fixture.candidate_ids)
    effectors = EffectorSet.from_fixture(fixture)
    rest = effectors.rest_positions
    schedule = {}
    default_eps = 1e-4
    eps_values = list(dict.fromkeys(list(eps_grid) + [default_eps]))
    for ci in range(n_c):
        f_max = max_displacement / float(ops.w_aa[ci][0, 0])
        mags = rng.uniform(0.5, f_max, n_trials)
        dirs = rng.normal(scale=0.2, size=(n_trials, 3)) + np.array([-1.0, 0.0, 0.0])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        forces = mags[:, None] * dirs
        noise = noise_sigma * rng.standard_normal((n_trials, len(rest), 3))
        cand_sets = {eps: ContactCandidateSet.from_fixture(fixture, epsilons=eps,
                                                           mounted_index=ci)
                     for eps in eps_values}
        errors = {eps: [] for eps in eps_values}
        for k in range(n_trials):
            u_kp = ops.w_ea[ci].reshape(-1, 3) @ forces[k]
            targets = rest + u_kp.reshape(-1, 3) + noise[k]
            eff = replace(effectors, targets=targets,
                          active=np.ones(len(rest), dtype=bool))
            for eps in eps_values:
                sol = solve(ops, eff, cand_sets[eps])
                errors[eps].append(np.linalg.norm(sol.lam - forces[k]))
        rmse = {eps: float(np.sqrt(np.mean(np.square(e)))) for eps, e in errors.items()}
        best = min(eps_grid, key=lambda e: rmse[e])
        if rmse[best] >= rmse[default_eps]:
            print(f"candidate {ci}: search did not improve on default, keeping {default_eps:g}",
                  file=sys.stderr)
            best = default_eps
        schedule[f"epsilon.{ci}"] = float(best)
    schedule["meta.seed"] = seed
    schedule["meta.n_trials"] = n_trials
    schedule["meta.noise_sigma"] = noise_sigma
    path = out_dir / "epsilon_schedule.cfg"
    cfgmod.save_config(schedule, path)
    return path


def benchmark(n_frames: int = 120) -> dict:
    """Per-jaw estimator-iteration rate and full dual-jaw pipeline rate on
    the canonical fixture, in steady contact."""
    scenario = default_ideal_scenario(
        shape=ShapeSpec.cylinder(0.025), contact_position="middle", dual_jaw=True,
        schedule=ScheduleConfig(kind="grasp"))
    engine = SimEngine(scenario)
    settings = EstimatorSettings()
    estimators = [JawEstimator(engine, i, settings) for i in range(2)]
    dt = 1.0 / scenario.camera_hz
    closure = engine.rigs[0].base_offset - engine.fixture.params.depth / 2.0 \
        - engine._object_half_extent_x() + 0.004
    packets = [engine.frame(i * dt, closure, "hold", True, dt) for i in range(n_frames)]
    for pkt in packets[:10]:
        for i, est in enumerate(estimators):
            est.step(pkt.observations[i], pkt.truth.timestamp, pkt.truth.jaws[i].candidate)
    t0 = time.perf_counter()
    for k, pkt in enumerate(packets):
        estimators[0].step(pkt.observations[0], pkt.truth.timestamp + 1.0 + k * dt,
                           pkt.truth.jaws[0].candidate)
    t_single = time.perf_counter() - t0
    t0 = time.perf_counter()
    for k, pkt in enumerate(packets):
        for i, est in enumerate(estimators):
            est.step(pkt.observations[i], pkt.truth.timestamp + 10.0 + k * dt,
                     pkt.truth.jaws[i].candidate)
    t_dual = time.perf_counter() - t0
    return {
        "hz_per_jaw": n_frames / t_single,
        "hz_dual": n_frames / t_dual,
        "n_frames": n_frames,
    }


def _write_report(out_dir: Path, report: MetricsReport) -> None:
    (out_dir / f"report-{report.suite}.json").write_text(
        json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    (out_dir / f"report-{report.suite}.md").write_text(report.markdown())


def rescore_runs(run_dir: Path, out_dir: Path) -> MetricsReport:
    """Re-aggregate metrics from existing run CSVs without re-simulation."""
    from .pipeline import load_run_csv
    conditions = []
    for csv_path in sorted(run_dir.glob("*.csv")):
        rows = [r for r in load_run_csv(csv_path) if r["jaw"] == 0]
        rec = [r for r in rows if r["recording"]]
        if not rec:
            continue
        sim = np.array([r["f_sim_n"] for r in rec])
        gt = np.array([r["f_gt_n"] for r in rec])
        r, n = rmse_nrmsd(sim, gt)
        conditions.append(ConditionMetrics(csv_path.stem, r, 0.0, n, 0.0,
                                           float(np.abs(sim - gt).max()), 1))
    report = MetricsReport("rescore", conditions, notes={"source": str(run_dir)})
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_report(out_dir, report)
    return report


# ---------------------------------------------------------------------------
# CLI

def _out_dir(args, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return Path("runs") / f"{default_name}-{stamp}"


def _load_mesh(path: str) -> SurfaceMesh:
    p = Path(path)
    if p.suffix.lower() == ".obj":
        v, t = load_obj(p)
    else:
        v, t, _ = load_off(p)
    return SurfaceMesh(v, t)


def cmd_genmesh(args) -> int:
    params = JawParams()
    if args.config:
        params = JawParams.from_mapping(
            cfgmod.section(cfgmod.load_config(args.config), "jaw"))
    fixture = generate_jaw(params)
    out = _out_dir(args, "genmesh")
    out.mkdir(parents=True, exist_ok=True)
    off_path, cfg_path = save_fixture(fixture, out / args.name)
    print(f"wrote {off_path} ({fixture.mesh.n_vertices} vertices, "
          f"{len(fixture.mesh.tets)} tets) and {cfg_path}")
    return 0


def cmd_calibrate_mesh(args) -> int:
    mesh = _load_mesh(args.mesh)
    cloud = load_point_cloud(args.cloud)
    camera = CameraModel()
    if args.camera:
        camera = cfgmod.apply_mapping(camera, cfgmod.section(
            cfgmod.load_config(args.camera), "camera"))
    truth = _load_mesh(args.truth) if args.truth else None
    result = calibrate(mesh, cloud, camera, truth_mesh=truth)
    out = _out_dir(args, "calibrate")
    out.mkdir(parents=True, exist_ok=True)
    save_off(out / "calibrated.off", result.mesh.vertices, result.mesh.triangles)
    save_obj(out / "calibrated.obj", result.mesh.vertices, result.mesh.triangles)
    (out / "calibration.json").write_text(
        json.dumps(result.report(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(result.report(), indent=2, sort_keys=True))
    return 0


def cmd_run(args) -> int:
    seed = args.seed
    if args.suite:
        out = _out_dir(args, args.suite)
        if args.suite == "static":
            _, ok = suite_static(out, seed=seed, ideal=args.ideal, quick=args.quick)
        elif args.suite == "ablation":
            seeds = tuple(range(seed, seed + (2 if args.quick else 5)))
            _, ok = suite_ablation(out, seeds=seeds, quick=args.quick)
        elif args.suite == "onrobot":
            _, ok = suite_onrobot(out, seed=seed, quick=args.quick)
        elif args.suite == "sweep":
            _, ok = suite_sweep(out, seed=seed)
        elif args.suite == "tune-epsilon":
            tune_epsilon(out, seed=seed)
            ok = True
        elif args.suite == "chip":
            _, ok = suite_chip(out, seed=seed)
        else:
            print(f"unknown suite {args.suite!r}", file=sys.stderr)
            return 2
        print(f"suite {args.suite}: {'ok' if ok else 'FAILED'} -> {out}")
        return 0 if ok else 1
    if not args.config:
        print("run requires --config or --suite", file=sys.stderr)
        return 2
    scenario, settings = scenario_from_config(cfgmod.load_config(args.config), seed=seed)
    out = _out_dir(args, "run")
    out.mkdir(parents=True, exist_ok=True)
    res = run_estimation(scenario, settings)
    res.to_csv(out / "run.csv")
    res.write_manifest(out / "manifest.json")
    rec = res.recorded_mask()
    if rec.any():
        r, n = rmse_nrmsd(res.column("f_sim_n")[rec], res.column("f_gt_n")[rec])
        print(f"frames={res.manifest.n_frames} rmse={r:.4f} N nrmsd={n:.2f}%")
    print(f"outputs in {out}")
    return 0


def cmd_sweep(args) -> int:
    out = _out_dir(args, "sweep")
    _, ok = suite_sweep(out, seed=args.seed)
    print(f"sweep -> {out}")
    return 0 if ok else 1


def cmd_tune_epsilon(args) -> int:
    out = _out_dir(args, "tune-epsilon")
    path = tune_epsilon(out, seed=args.seed, n_trials=args.trials)
    print(f"wrote {path}")
    return 0


def cmd_report(args) -> int:
    report = rescore_runs(Path(args.runs), _out_dir(args, "report"))
    print(report.markdown())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="finray",
        description="Visual grasp-force sensing for fin-ray grippers: "
                    "simulation harness, calibration, and evaluation suites.")
    parser.add_argument("--version", action="version", version=f"finray {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genmesh", help="generate the parametric jaw fixture")
    p.add_argument("--config", help="key-value config with jaw.* parameters")
    p.add_argument("--name", default="jaw")
    p.add_argument("--out")
    p.set_defaults(func=cmd_genmesh)

    p = sub.add_parser("calibrate-mesh", help="scale-calibrate a mesh against a scan")
    p.add_argument("--mesh", required=True, help="OBJ or OFF mesh path")
    p.add_argument("--cloud", required=True, help="PLY or CSV xyz point cloud")
    p.add_argument("--camera", help="key-value config with camera.* intrinsics")
    p.add_argument("--truth", help="optional ground-truth mesh for Chamfer")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate_mesh)

    p = sub.add_parser("run", help="run a scenario config or an evaluation suite")
    p.add_argument("--config", help="scenario config file")
    p.add_argument("--suite", choices=["static", "ablation", "onrobot", "sweep",
                                       "tune-epsilon", "chip"])
    p.add_argument("--ideal", action="store_true",
                   help="noiseless matched-mount mode (static suite)")
    p.add_argument("--quick", action="store_true", help="reduced grids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="closing-speed sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tune-epsilon", help="tune per-candidate regularization")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=150)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune_epsilon)

    p = sub.add_parser("report", help="re-score existing run CSVs")
    p.add_argument("--runs", required=True, help="directory of run CSVs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
