"""Force decomposition, error metrics, phase segmentation, and report
tables.

Grasp force is the smaller jaw force magnitude; manipulation force is the
signed left-minus-right difference. NRMSD normalizes RMSE by the observed
force range of the evaluation protocol (11.04 N) when scoring
report-shaped outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

NORMALIZATION_RANGE_N = 11.04

PHASES = ("pre", "load", "hold", "unload", "post")


def decompose(f_left: float, f_right: float) -> tuple[float, float]:
    """(grasp, manipulation) from the per-jaw scalar forces.

    Grasp is min(|left|, |right|); manipulation is left - right, positive
    toward the left jaw's direction.
    """
    grasp = min(abs(f_left), abs(f_right))
    manip = f_left - f_right
    return grasp, manip


def max_error(sim: np.ndarray, gt: np.ndarray) -> float:
    return float(np.abs(np.asarray(sim) - np.asarray(gt)).max())


def rmse_nrmsd(sim: Sequence[float], gt: Sequence[float],
               force_range: float = NORMALIZATION_RANGE_N) -> tuple[float, float]:
    """Root-mean-square error and its percentage of the force range."""
    sim = np.asarray(sim, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if sim.shape != gt.shape or sim.size == 0:
        raise ValueError("series must align and be non-empty")
    rmse = float(np.sqrt(np.mean((sim - gt) ** 2)))
    return rmse, rmse / force_range * 100.0


def align_series(t_sim: np.ndarray, sim: np.ndarray, t_gt: np.ndarray, gt: np.ndarray,
                 max_gap: float) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor timestamp alignment within half a frame."""
    t_sim = np.asarray(t_sim)
    t_gt = np.asarray(t_gt)
    idx = np.searchsorted(t_gt, t_sim)
    idx = np.clip(idx, 1, len(t_gt) - 1)
    left = idx - 1
    choose_left = np.abs(t_sim - t_gt[left]) <= np.abs(t_gt[idx] - t_sim)
    nearest = np.where(choose_left, left, idx)
    ok = np.abs(t_gt[nearest] - t_sim) <= max_gap
    if not ok.any():
        raise ValueError("no overlapping samples within the alignment gap")
    return np.asarray(sim)[ok], np.asarray(gt)[nearest[ok]]


def segment_phases(timestamps: np.ndarray, stage_times: dict) -> np.ndarray:
    """Phase labels from the run manifest's stage timestamps.

    Expects stage1..stage4 marks (grasp onset, full grasp, release begin,
    fully released); the load phase spans stage1 to stage2.
    """
    required = ("stage1", "stage2", "stage3", "stage4")
    if not stage_times or any(k not in stage_times for k in required):
        raise ValueError("manifest lacks the four stage timestamps")
    t = np.asarray(timestamps, dtype=np.float64)
    s1, s2, s3, s4 = (stage_times[k] for k in required)
    labels = np.full(len(t), "post", dtype=object)
    labels[t < s1] = "pre"
    labels[(t >= s1) & (t < s2)] = "load"
    labels[(t >= s2) & (t < s3)] = "hold"
    labels[(t >= s3) & (t < s4)] = "unload"
    return labels


@dataclass
class ForceRecord:
    """One dual-jaw frame in report form."""

    timestamp: float
    f_left: float
    f_right: float
    grasp: float
    manipulation: float
    f_gt: float
    stage: str

    @classmethod
    def from_scalars(cls, timestamp: float, f_left: float, f_right: float,
                     f_gt: float, stage: str) -> "ForceRecord":
        grasp, manip = decompose(f_left, f_right)
        return cls(timestamp, f_left, f_right, grasp, manip, f_gt, stage)


class ThresholdTrigger:
    """Latched stop signal on the grasp-force stream."""

    def __init__(self, threshold: float):
        self.threshold = threshold
        self.fired = False
        self.fire_index: Optional[int] = None
        self._count = 0

    def update(self, grasp_force: float) -> bool:
        if not self.fired and grasp_force >= self.threshold:
            self.fired = True
            self.fire_index = self._count
        self._count += 1
        return self.fired


@dataclass
class ConditionMetrics:
    """Aggregated accuracy for one grid condition."""

    label: str
    rmse_mean: float
    rmse_std: float
    nrmsd_mean: float
    nrmsd_std: float
    max_error: float
    n_cycles: int
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_cycles(cls, label: str, sims: Iterable[np.ndarray],
                    gts: Iterable[np.ndarray],
                    force_range: float = NORMALIZATION_RANGE_N,
                    **extra) -> "ConditionMetrics":
        rmses, nrmsds, maxes = [], [], []
        for sim, gt in zip(sims, gts):
            r, n = rmse_nrmsd(sim, gt, force_range)
            rmses.append(r)
            nrmsds.append(n)
            maxes.append(max_error(sim, gt))
        rmses = np.array(rmses)
        nrmsds = np.array(nrmsds)
        return cls(label, float(rmses.mean()), float(rmses.std()),
                   float(nrmsds.mean()), float(nrmsds.std()),
                   float(max(maxes)), len(rmses), dict(extra))

    def row(self) -> dict:
        return {
            "condition": self.label,
            "rmse_mean": self.rmse_mean,
            "rmse_std": self.rmse_std,
            "nrmsd_mean": self.nrmsd_mean,
            "nrmsd_std": self.nrmsd_std,
            "max_error": self.max_error,
            "n_cycles": self.n_cycles,
            **self.extra,
        }


@dataclass
class MetricsReport:
    suite: str
    conditions: list[ConditionMetrics]
    schema_version: int = 1
    force_range: float = NORMALIZATION_RANGE_N
    notes: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "suite": self.suite,
            "force_range": self.force_range,
            "conditions": [c.row() for c in self.conditions],
            "notes": self.notes,
        }

    def markdown(self) -> str:
        lines = [
            f"### {self.suite}",
            "",
            "| Condition | RMSE (N) | NRMSD (%) | Max Error (N) |",
            "| --- | --- | --- | --- |",
        ]
        for c in self.conditions:
            lines.append(
                f"| {c.label} | {c.rmse_mean:.2f} ± {c.rmse_std:.2f} "
                f"| {c.nrmsd_mean:.2f} ± {c.nrmsd_std:.2f} | {c.max_error:.2f} |")
        return "\n".join(lines) + "\n"
