"""
Rigid pose algebra in five minutes
==================================

Poses are 4x4 homogeneous matrices; the human-friendly view is six numbers
(tx, ty, tz in mm, rx, ry, rz in degrees). This walks the round trip and the
composition rules everything else in the package leans on.
"""

import warnings

import numpy as np

from dualtrack import geometry

np.set_printoptions(precision=4, suppress=True)

# ---- six numbers to a matrix and back ------------------------------------
p = np.array([10.0, -4.0, 2.5, 15.0, -30.0, 45.0])
T = geometry.params_to_matrix(p)
print("pose matrix for", p)
print(T)
print("recovered params:", geometry.matrix_to_params(T))

# rotations apply x first, then y, then z; a 90 degree rz sends x to y
Rz90 = geometry.params_to_matrix([0, 0, 0, 0, 0, 90])
print("\nrz=90 moves x-hat to:", (Rz90 @ [1, 0, 0, 1])[:3])

# ---- composition and relative transforms ----------------------------------
A = geometry.params_to_matrix([5, 0, 0, 0, 0, 30])
B = geometry.params_to_matrix([0, 3, 1, 10, 0, 0])
AB = geometry.compose(A, B)
rel = geometry.relative_transform(A, AB)   # expressed in A's frame
print("\nrelative transform A->A@B recovers B:", np.allclose(rel, B))

# ---- a trajectory is just accumulated relative steps ----------------------
rng = np.random.default_rng(0)
steps = np.column_stack([rng.uniform(-0.5, 0.5, (99, 3)),
                         rng.uniform(-1.0, 1.0, (99, 3))])
traj = geometry.compose_trajectory(steps)
print("\n100-pose walk, final position:", traj[-1][:3, 3])

# decompose and rebuild; orthonormalization keeps the drift at float noise
rebuilt = geometry.compose_trajectory(geometry.trajectory_to_relative_params(traj),
                                      T_0=traj[0])
print("rebuild error:", np.abs(rebuilt - traj).max())

# ---- the pitch singularity is flagged, not hidden --------------------------
near_gimbal = geometry.params_to_matrix([0, 0, 0, 20, 89.9999, -10])
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    geometry.matrix_to_params(near_gimbal)
print("\nnear ry=90 the decomposition warns:", [str(w.category.__name__) for w in caught])
