"""Drift metrics checked against naive double-loop reimplementations."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualtrack import geometry, metrics

from conftest import random_params

W, H = 24, 18
CAL = metrics.Calibration(pixel_spacing=(0.4, 0.5))


def make_pair(seed, n=12):
    """A ground-truth trajectory and a perturbed prediction."""
    rng = np.random.default_rng(seed)
    steps = random_params(rng, n=n - 1, max_t=0.8, max_deg=2.0)
    gt = geometry.compose_trajectory(steps, geometry.params_to_matrix(random_params(rng)))
    noisy = steps + rng.normal(0, 0.05, steps.shape)
    pred = geometry.compose_trajectory(noisy, geometry.params_to_matrix(random_params(rng)))
    return gt, pred


def naive_frame_points(cal, width, height):
    sx, sy = cal.pixel_spacing
    pixels = [(0, 0), (width - 1, 0), (0, height - 1), (width - 1, height - 1),
              ((width - 1) / 2.0, (height - 1) / 2.0)]
    pts = []
    for u, v in pixels:
        hom = cal.image_to_probe @ np.array([u * sx, v * sy, 0.0, 1.0])
        pts.append(hom[:3])
    return np.array(pts)


def naive_rebase(traj):
    T0_inv = np.linalg.inv(traj[0])
    return np.array([T0_inv @ T for T in traj])


def naive_gpe(gt, pred, cal, width, height):
    gt, pred = naive_rebase(gt), naive_rebase(pred)
    pts = naive_frame_points(cal, width, height)
    total, count = 0.0, 0
    for Tg, Tp in zip(gt, pred):
        for p in pts:
            a = Tg[:3, :3] @ p + Tg[:3, 3]
            b = Tp[:3, :3] @ p + Tp[:3, 3]
            total += np.linalg.norm(a - b)
            count += 1
    return total / count


def naive_lpe(gt, pred, cal, width, height):
    gt, pred = naive_rebase(gt), naive_rebase(pred)
    pts = naive_frame_points(cal, width, height)
    total, count = 0.0, 0
    for i in range(1, len(gt)):
        rel_g = np.linalg.inv(gt[i - 1]) @ gt[i]
        rel_p = np.linalg.inv(pred[i - 1]) @ pred[i]
        for p in pts:
            a = rel_g[:3, :3] @ p + rel_g[:3, 3]
            b = rel_p[:3, :3] @ p + rel_p[:3, 3]
            total += np.linalg.norm(a - b)
            count += 1
    return (total / count) * 1000.0


def naive_drift(gt, pred):
    gt, pred = naive_rebase(gt), naive_rebase(pred)
    return np.array([np.linalg.norm(Tp[:3, 3] - Tg[:3, 3]) for Tg, Tp in zip(gt, pred)])


def naive_fdr(gt, pred):
    gt, pred = naive_rebase(gt), naive_rebase(pred)
    span = np.linalg.norm(gt[-1][:3, 3] - gt[0][:3, 3])
    end_err = np.linalg.norm(pred[-1][:3, 3] - gt[-1][:3, 3])
    return 100.0 * end_err / span


def test_frame_points_against_naive():
    got = metrics.frame_points(CAL, W, H)
    np.testing.assert_allclose(got, naive_frame_points(CAL, W, H), atol=1e-12)
    tilted = metrics.Calibration(
        pixel_spacing=(0.3, 0.3),
        image_to_probe=geometry.params_to_matrix(
            np.array([1.0, -2.0, 0.5, 10.0, 5.0, -4.0])))
    np.testing.assert_allclose(
        metrics.frame_points(tilted, W, H), naive_frame_points(tilted, W, H), atol=1e-12)


def test_frame_points_rejects_degenerate_frames():
    with pytest.raises(ValueError):
        metrics.frame_points(CAL, 1, H)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_metrics_match_brute_force(seed):
    gt, pred = make_pair(seed)
    assert abs(metrics.global_point_error(gt, pred, CAL, W, H)
               - naive_gpe(gt, pred, CAL, W, H)) < 1e-9
    assert abs(metrics.local_point_error(gt, pred, CAL, W, H)
               - naive_lpe(gt, pred, CAL, W, H)) < 1e-9
    np.testing.assert_allclose(metrics.drift_series(gt, pred), naive_drift(gt, pred),
                               atol=1e-9)
    assert abs(metrics.max_drift(gt, pred) - naive_drift(gt, pred).max()) < 1e-9
    assert abs(metrics.final_drift_rate(gt, pred) - naive_fdr(gt, pred)) < 1e-9


def test_perfect_prediction_scores_zero():
    gt, _ = make_pair(7)
    rep = metrics.evaluate_trajectories(gt, gt.copy(), CAL, W, H)
    assert rep.gpe_mm == 0.0 and rep.lpe_um == 0.0
    assert rep.fdr_percent == 0.0 and rep.max_drift_mm == 0.0


def test_metrics_invariant_to_common_rigid_offset():
    gt, pred = make_pair(11)
    offset = geometry.params_to_matrix(np.array([30.0, -12.0, 4.0, 20.0, -35.0, 50.0]))
    gt2 = np.array([geometry.compose(offset, T) for T in gt])
    pred2 = np.array([geometry.compose(offset, T) for T in pred])
    a = metrics.evaluate_trajectories(gt, pred, CAL, W, H)
    b = metrics.evaluate_trajectories(gt2, pred2, CAL, W, H)
    assert abs(a.gpe_mm - b.gpe_mm) < 1e-9
    assert abs(a.lpe_um - b.lpe_um) < 1e-9
    assert abs(a.fdr_percent - b.fdr_percent) < 1e-8
    assert abs(a.max_drift_mm - b.max_drift_mm) < 1e-9


def test_prediction_base_pose_is_ignored():
    # Predictions are compared after rebasing, so a global offset applied
    # to the prediction alone must not change any metric.
    gt, pred = make_pair(13)
    offset = geometry.params_to_matrix(np.array([5.0, 6.0, -7.0, 10.0, 20.0, 30.0]))
    pred2 = np.array([geometry.compose(offset, T) for T in pred])
    a = metrics.evaluate_trajectories(gt, pred, CAL, W, H)
    b = metrics.evaluate_trajectories(gt, pred2, CAL, W, H)
    assert abs(a.gpe_mm - b.gpe_mm) < 1e-9
    assert abs(a.max_drift_mm - b.max_drift_mm) < 1e-9


def test_translation_only_error_gpe():
    # A constant 1 mm offset in every frame after the first is diluted by
    # the zero-error anchor frame: mean displacement = (N-1)/N.
    n = 10
    gt = geometry.compose_trajectory(np.zeros((n - 1, 6)))
    steps = np.zeros((n - 1, 6))
    steps[0, 0] = 1.0
    pred = geometry.compose_trajectory(steps)
    gpe = metrics.global_point_error(gt, pred, CAL, W, H)
    assert abs(gpe - (n - 1) / n) < 1e-12


def test_lpe_unit_conversion():
    # One 3 um translation error on a single adjacent pair, identity
    # rotations: mean over (N-1) pairs and 5 points in um.
    n = 5
    gt = geometry.compose_trajectory(np.zeros((n - 1, 6)))
    steps = np.zeros((n - 1, 6))
    steps[2, 1] = 3e-3
    pred = geometry.compose_trajectory(steps)
    lpe = metrics.local_point_error(gt, pred, CAL, W, H)
    assert abs(lpe - 3.0 / (n - 1)) < 1e-9


def test_fdr_degenerate_span_raises():
    n = 4
    gt = geometry.compose_trajectory(np.zeros((n - 1, 6)))  # zero span
    pred = gt.copy()
    with pytest.raises(metrics.DegenerateScanError):
        metrics.final_drift_rate(gt, pred)


def test_fdr_hundred_percent_for_zero_motion_prediction():
    rng = np.random.default_rng(0)
    steps = np.zeros((9, 6))
    steps[:, 2] = 1.0
    gt = geometry.compose_trajectory(steps)
    pred = geometry.compose_trajectory(np.zeros((9, 6)))
    assert abs(metrics.final_drift_rate(gt, pred) - 100.0) < 1e-9


def test_report_serialization_round_trip():
    gt, pred = make_pair(21)
    rep = metrics.evaluate_trajectories(gt, pred, CAL, W, H)
    payload = json.loads(rep.to_json())
    assert set(payload) == {"gpe_mm", "lpe_um", "fdr_percent", "max_drift_mm",
                            "per_frame_drift_mm"}
    back = metrics.MetricsReport.from_json(rep.to_json())
    assert abs(back.gpe_mm - rep.gpe_mm) < 1e-12
    assert len(back.per_frame_drift_mm) == len(gt)


def test_report_rejects_inconsistent_fields():
    with pytest.raises(ValueError):
        metrics.MetricsReport(gpe_mm=1.0, lpe_um=1.0, fdr_percent=1.0,
                              max_drift_mm=0.5, per_frame_drift_mm=[0.0, 1.0])
    with pytest.raises(ValueError):
        metrics.MetricsReport(gpe_mm=-1.0, lpe_um=0.0, fdr_percent=0.0,
                              max_drift_mm=0.0, per_frame_drift_mm=[0.0])


def test_length_mismatch_rejected():
    gt, pred = make_pair(1)
    with pytest.raises(ValueError):
        metrics.global_point_error(gt, pred[:-1], CAL, W, H)


def test_calibration_round_trip():
    cal = metrics.Calibration(
        pixel_spacing=(0.25, 0.35),
        image_to_probe=geometry.params_to_matrix(
            np.array([0.5, 0, 0, 0, 0, 15.0])))
    back = metrics.Calibration.from_dict(cal.to_dict())
    assert back.pixel_spacing == cal.pixel_spacing
    np.testing.assert_allclose(back.image_to_probe, cal.image_to_probe)
    d = cal.to_dict()
    assert set(d) == {"pixel_spacing_mm", "image_to_probe"}
    assert len(d["image_to_probe"]) == 16


def test_calibration_validation():
    with pytest.raises(ValueError):
        metrics.Calibration(pixel_spacing=(0.0, 0.4))
    with pytest.raises(ValueError):
        metrics.Calibration(pixel_spacing=(0.4, 0.4),
                            image_to_probe=np.arange(16, dtype=float).reshape(4, 4))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_drift_series_shape_and_anchor(seed):
    gt, pred = make_pair(seed % 1000, n=8)
    series = metrics.drift_series(gt, pred)
    assert series.shape == (8,)
    assert series[0] < 1e-12      # both rebased to the same start
    assert np.all(series >= 0)
