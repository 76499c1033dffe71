"""
Synthetic speckle phantoms and probe sweeps
===========================================

There is no real scanner here. We build a speckle volume with a few smooth
landmarks, drive a virtual probe through it along one of three trajectory
families, and slice frames off the image plane as we go.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from dualtrack import geometry, metrics, phantom

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# ---- a phantom is a volume plus its voxel pitch ----------------------------
ph = phantom.make_phantom(seed=3, size=96, spacing_mm=0.7, n_landmarks=8)
print("phantom:", ph.volume.shape, "voxels at", ph.voxel_spacing, "mm,",
      len(ph.landmarks), "landmarks")

# ---- three ways to move a probe --------------------------------------------
cal = metrics.Calibration((0.4, 0.4), np.eye(4))
width = height = 64
extent = ((width - 1) * cal.pixel_spacing[0], (height - 1) * cal.pixel_spacing[1])

sweeps = {}
for family in phantom.TRAJECTORY_FAMILIES:
    spec = phantom.TrajectorySpec(family, length_mm=30.0, num_frames=48, seed=11)
    traj = phantom.make_trajectory(spec, bounds_mm=ph.bounds_mm, frame_extent_mm=extent)
    sweeps[family] = phantom.render_sweep(ph, traj, cal, width, height,
                                          noise_level=0.02, seed=7, sweep_id=family)
    steps = np.linalg.norm(np.diff(geometry.translations(traj), axis=0), axis=1)
    print(f"{family:8s} frame-to-frame steps {steps.min():.2f}..{steps.max():.2f} mm")

# ---- look at what the probe saw ---------------------------------------------
fig, axes = plt.subplots(3, 5, figsize=(11, 7))
for row, (family, sw) in enumerate(sweeps.items()):
    for col, i in enumerate(np.linspace(0, sw.num_frames - 1, 5).astype(int)):
        ax = axes[row, col]
        ax.imshow(sw.frames[i], cmap="gray", vmin=0, vmax=1)
        ax.set_xticks([]), ax.set_yticks([])
        if col == 0:
            ax.set_ylabel(family)
        ax.set_title(f"frame {i}", fontsize=8)
fig.suptitle("five frames from each trajectory family")
fig.tight_layout()
fig.savefig(out / "sweep_frames.png", dpi=110)
print("wrote", out / "sweep_frames.png")

# ---- and where it went -------------------------------------------------------
fig = plt.figure(figsize=(6, 5))
ax = fig.add_subplot(projection="3d")
for family, sw in sweeps.items():
    xyz = geometry.translations(geometry.rebase_trajectory(sw.poses))
    ax.plot(*xyz.T, label=family)
ax.set_xlabel("x mm"), ax.set_ylabel("y mm"), ax.set_zlabel("z mm")
ax.legend()
fig.savefig(out / "sweep_paths.png", dpi=110)
print("wrote", out / "sweep_paths.png")
