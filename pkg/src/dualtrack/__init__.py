"""Sensorless freehand 3D ultrasound trajectory estimation.

Library layout:

- :mod:`dualtrack.geometry`: rigid poses, 6-DoF parameters, trajectories.
- :mod:`dualtrack.metrics`: drift metrics between pose trajectories.
- :mod:`dualtrack.phantom`: synthetic speckle volumes, scan paths, slicing.
- :mod:`dualtrack.data`: sweep file format, datasets, subsequence samplers.
- :mod:`dualtrack.networks`: local/global encoders and their fusion.
- :mod:`dualtrack.training`: staged optimization, checkpoints, ablations.
- :mod:`dualtrack.volume`: trajectory-guided volume compounding.
- :mod:`dualtrack.plots`: evaluation figures.
- :mod:`dualtrack.cli`: command-line entry points.
"""

from .geometry import (
    compose,
    compose_trajectory,
    identity_pose,
    matrix_to_params,
    params_to_matrix,
    pose_inverse,
    rebase_trajectory,
    relative_transform,
    trajectory_to_relative_params,
)
from .metrics import Calibration, MetricsReport, evaluate_trajectories
from .data import Sweep, SweepDataset, load_sweep, save_sweep
from .phantom import Phantom, TrajectorySpec, make_phantom, make_trajectory, render_sweep

__version__ = "0.1.0"

__all__ = [
    "Calibration",
    "MetricsReport",
    "Phantom",
    "Sweep",
    "SweepDataset",
    "TrajectorySpec",
    "compose",
    "compose_trajectory",
    "evaluate_trajectories",
    "identity_pose",
    "load_sweep",
    "make_phantom",
    "make_trajectory",
    "matrix_to_params",
    "params_to_matrix",
    "pose_inverse",
    "rebase_trajectory",
    "relative_transform",
    "render_sweep",
    "save_sweep",
    "trajectory_to_relative_params",
    "__version__",
]
