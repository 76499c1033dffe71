"""Trajectory reconstruction error metrics.

Four scalar metrics compare a predicted trajectory against ground truth:

- GPE (mm): mean displacement of five image points (corners + center)
  under the accumulated predicted vs true pose, averaged over all frames.
- LPE (um): the same five-point displacement but between adjacent-frame
  relative transforms, so it ignores accumulated drift.
- FDR (%): final position error normalized by the ground-truth
  start-to-end distance.
- Max drift (mm): largest per-frame translational error.

Both trajectories are rebased to a common start (first pose = identity)
before comparison, so results do not depend on the world anchoring as long
as prediction and ground truth share frame 0.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from . import geometry

MM_PER_UM = 1e-3
UM_PER_MM = 1e3

DEGENERATE_SPAN_MM = 1e-6


class DegenerateScanError(ValueError):
    """Start-to-end ground-truth distance too small to normalize FDR."""


@dataclasses.dataclass(frozen=True)
class Calibration:
    """Image-plane geometry: pixel size and the image-to-probe transform.

    ``pixel_spacing`` is (sx, sy) in mm/pixel. ``image_to_probe`` maps a
    point (u * sx, v * sy, 0, 1) given in image-plane millimetres into the
    probe coordinate frame that trajectory poses act on.
    """

    pixel_spacing: tuple[float, float]
    image_to_probe: np.ndarray = dataclasses.field(default_factory=geometry.identity_pose)

    def __post_init__(self):
        sx, sy = self.pixel_spacing
        if not (sx > 0 and sy > 0):
            raise ValueError("pixel spacing components must be positive")
        object.__setattr__(
            self, "image_to_probe",
            geometry.require_pose(self.image_to_probe, name="image_to_probe"),
        )

    def to_dict(self) -> dict:
        return {
            "pixel_spacing_mm": [float(v) for v in self.pixel_spacing],
            "image_to_probe": [float(v) for v in np.asarray(self.image_to_probe).ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        m = np.asarray(d["image_to_probe"], dtype=np.float64).reshape(4, 4)
        sx, sy = d["pixel_spacing_mm"]
        return cls(pixel_spacing=(float(sx), float(sy)), image_to_probe=m)


def frame_points(cal: Calibration, width: int, height: int) -> np.ndarray:
    """The five reference points (4 corners + center) in probe-frame mm, (5, 3)."""
    if width < 2 or height < 2:
        raise ValueError("image must be at least 2x2 pixels")
    sx, sy = cal.pixel_spacing
    pix = np.array(
        [
            [0.0, 0.0],
            [width - 1.0, 0.0],
            [0.0, height - 1.0],
            [width - 1.0, height - 1.0],
            [(width - 1.0) / 2.0, (height - 1.0) / 2.0],
        ]
    )
    pts = np.zeros((5, 4))
    pts[:, 0] = pix[:, 0] * sx
    pts[:, 1] = pix[:, 1] * sy
    pts[:, 3] = 1.0
    return (cal.image_to_probe @ pts.T).T[:, :3]


def _check_pair(gt, pred, min_len: int = 1):
    gt = geometry.require_trajectory(gt, name="gt")
    pred = geometry.require_trajectory(pred, name="pred")
    if len(gt) != len(pred):
        raise ValueError(f"trajectory length mismatch: gt {len(gt)} vs pred {len(pred)}")
    if len(gt) < min_len:
        raise ValueError(f"need at least {min_len} frames, got {len(gt)}")
    return geometry.rebase_trajectory(gt), geometry.rebase_trajectory(pred)


def _apply(traj: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Transform (5,3) points by every pose; returns (N, 5, 3)."""
    return np.einsum("nij,pj->npi", traj[:, :3, :3], pts) + traj[:, None, :3, 3]


def global_point_error(gt, pred, cal: Calibration, width: int, height: int) -> float:
    """GPE in mm: mean five-point displacement under accumulated poses."""
    gt, pred = _check_pair(gt, pred)
    pts = frame_points(cal, width, height)
    diff = _apply(gt, pts) - _apply(pred, pts)
    return float(np.mean(np.linalg.norm(diff, axis=-1)))


def local_point_error(gt, pred, cal: Calibration, width: int, height: int) -> float:
    """LPE in micrometres: five-point displacement of adjacent-frame relatives."""
    gt, pred = _check_pair(gt, pred, min_len=2)
    pts = frame_points(cal, width, height)
    errs = []
    for i in range(1, len(gt)):
        rel_gt = geometry.relative_transform(gt[i - 1], gt[i])
        rel_pred = geometry.relative_transform(pred[i - 1], pred[i])
        diff = (rel_gt[:3, :3] @ pts.T).T + rel_gt[:3, 3] - ((rel_pred[:3, :3] @ pts.T).T + rel_pred[:3, 3])
        errs.append(np.linalg.norm(diff, axis=-1))
    return float(np.mean(errs)) * UM_PER_MM


def drift_series(gt, pred) -> np.ndarray:
    """Per-frame translational error ||t_pred - t_gt|| in mm, shape (N,)."""
    gt, pred = _check_pair(gt, pred)
    return np.linalg.norm(geometry.translations(pred) - geometry.translations(gt), axis=1)


def max_drift(gt, pred) -> float:
    """Largest per-frame translational error in mm."""
    return float(np.max(drift_series(gt, pred)))


def final_drift_rate(gt, pred) -> float:
    """FDR in percent: endpoint error over ground-truth start-to-end span."""
    gt, pred = _check_pair(gt, pred, min_len=2)
    t_gt = geometry.translations(gt)
    t_pred = geometry.translations(pred)
    span = float(np.linalg.norm(t_gt[-1] - t_gt[0]))
    if span <= DEGENERATE_SPAN_MM:
        raise DegenerateScanError(
            f"start-to-end ground-truth distance {span:.3e} mm is too small to normalize"
        )
    return 100.0 * float(np.linalg.norm(t_pred[-1] - t_gt[-1])) / span


@dataclasses.dataclass
class MetricsReport:
    """All four metrics for one sweep, plus the per-frame drift series."""

    gpe_mm: float
    lpe_um: float
    fdr_percent: float
    max_drift_mm: float
    per_frame_drift_mm: list[float]

    def __post_init__(self):
        vals = [self.gpe_mm, self.lpe_um, self.fdr_percent, self.max_drift_mm]
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("metric values must be finite and nonnegative")
        if self.per_frame_drift_mm and not np.isclose(
            self.max_drift_mm, max(self.per_frame_drift_mm), rtol=0, atol=1e-12
        ):
            raise ValueError("max_drift_mm must equal max(per_frame_drift_mm)")

    def to_dict(self) -> dict:
        return {
            "gpe_mm": float(self.gpe_mm),
            "lpe_um": float(self.lpe_um),
            "fdr_percent": float(self.fdr_percent),
            "max_drift_mm": float(self.max_drift_mm),
            "per_frame_drift_mm": [float(v) for v in self.per_frame_drift_mm],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            gpe_mm=d["gpe_mm"],
            lpe_um=d["lpe_um"],
            fdr_percent=d["fdr_percent"],
            max_drift_mm=d["max_drift_mm"],
            per_frame_drift_mm=list(d["per_frame_drift_mm"]),
        )

    @classmethod
    def from_json(cls, s: str) -> "MetricsReport":
        return cls.from_dict(json.loads(s))


def evaluate_trajectories(gt, pred, cal: Calibration, width: int, height: int) -> MetricsReport:
    """Compute the full MetricsReport for one ground-truth/prediction pair."""
    series = drift_series(gt, pred)
    return MetricsReport(
        gpe_mm=global_point_error(gt, pred, cal, width, height),
        lpe_um=local_point_error(gt, pred, cal, width, height),
        fdr_percent=final_drift_rate(gt, pred),
        max_drift_mm=float(np.max(series)),
        per_frame_drift_mm=[float(v) for v in series],
    )
