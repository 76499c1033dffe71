"""Procedural speckle phantom and parametric probe trajectories.

The phantom is a 3D texture standing in for real anatomy: band-pass
filtered noise provides a speckle analogue whose slice-to-slice
decorrelation carries out-of-plane motion information, and a sparse set of
smooth landmark structures (ellipsoids and curved tubes) provides the
coarse, position-dependent cues a global encoder can anchor to. Slicing it
with trilinear interpolation is not a physical ultrasound model; it is the
minimal texture that exposes both learning signals.

Trajectory families:

- ``linear``: constant-velocity out-of-plane translation.
- ``c-shape``: constant small out-of-plane curvature (the plane normal
  turns steadily) plus gentle in-plane rotation.
- ``s-shape``: the out-of-plane step component reverses sign mid-sweep
  while in-plane translation keeps the probe moving, so the sweep weaves.
  The reversal is deliberately ambiguous to purely local texture cues.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .data import Sweep
from .metrics import Calibration

TRAJECTORY_FAMILIES = ("linear", "c-shape", "s-shape")

MIN_STEP_MM = 0.1
MAX_STEP_MM = 1.0


class GenerationError(RuntimeError):
    """A requested phantom slice or trajectory leaves the phantom bounds."""


@dataclasses.dataclass(frozen=True)
class Landmark:
    kind: str                       # "ellipsoid" or "tube"
    center: tuple[float, float, float]   # mm; tube: curve midpoint control
    radii: tuple[float, float, float]    # mm; tube uses radii[0] only
    intensity: float                # additive offset, may be negative
    endpoints: tuple | None = None  # tube only: (p0, p2) control points, mm


@dataclasses.dataclass
class Phantom:
    volume: np.ndarray        # (n, n, n) float32 in [0, 1], axis order (x, y, z)
    voxel_spacing: float      # mm, isotropic
    landmarks: list[Landmark]

    @property
    def bounds_mm(self) -> np.ndarray:
        """World extent per axis; valid sample coordinates are [0, bound]."""
        return (np.array(self.volume.shape, dtype=np.float64) - 1.0) * self.voxel_spacing


def _ellipsoid_offset(vol: np.ndarray, spacing: float, lm: Landmark) -> None:
    n = np.array(vol.shape)
    c = np.array(lm.center) / spacing
    r = np.array(lm.radii) / spacing
    lo = np.maximum(np.floor(c - 2 * r).astype(int), 0)
    hi = np.minimum(np.ceil(c + 2 * r).astype(int) + 1, n)
    if np.any(lo >= hi):
        return
    ax = [np.arange(lo[d], hi[d]) - c[d] for d in range(3)]
    d2 = (
        (ax[0][:, None, None] / r[0]) ** 2
        + (ax[1][None, :, None] / r[1]) ** 2
        + (ax[2][None, None, :] / r[2]) ** 2
    )
    vol[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] += lm.intensity * np.exp(-3.0 * d2)


def _tube_offset(vol: np.ndarray, spacing: float, lm: Landmark) -> None:
    p0, p2 = (np.array(p) for p in lm.endpoints)
    p1 = np.array(lm.center)
    t = np.linspace(0.0, 1.0, 160)[:, None]
    curve = ((1 - t) ** 2) * p0 + 2 * t * (1 - t) * p1 + (t ** 2) * p2  # quadratic Bezier
    radius = lm.radii[0]
    n = np.array(vol.shape)
    lo = np.maximum(np.floor((curve.min(axis=0) - 2 * radius) / spacing).astype(int), 0)
    hi = np.minimum(np.ceil((curve.max(axis=0) + 2 * radius) / spacing).astype(int) + 1, n)
    if np.any(lo >= hi):
        return
    grid = np.stack(
        np.meshgrid(*[np.arange(lo[d], hi[d]) * spacing for d in range(3)], indexing="ij"),
        axis=-1,
    )
    dist, _ = cKDTree(curve).query(grid.reshape(-1, 3))
    d2 = (dist.reshape(grid.shape[:3]) / radius) ** 2
    vol[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] += lm.intensity * np.exp(-3.0 * d2)


def add_landmark(vol: np.ndarray, spacing: float, lm: Landmark) -> None:
    """Add one smooth landmark structure to a volume in place."""
    if lm.kind == "ellipsoid":
        _ellipsoid_offset(vol, spacing, lm)
    elif lm.kind == "tube":
        _tube_offset(vol, spacing, lm)
    else:
        raise ValueError(f"unknown landmark kind {lm.kind!r}")


def _random_landmarks(rng: np.random.Generator, extent: np.ndarray, n: int) -> list[Landmark]:
    landmarks = []
    for i in range(n):
        intensity = float(rng.uniform(0.25, 0.45) * rng.choice([-1.0, 1.0]))
        if i % 2 == 0:
            center = tuple(rng.uniform(0.25, 0.75, size=3) * extent)
            radii = tuple(rng.uniform(4.0, 12.0, size=3))
            landmarks.append(Landmark("ellipsoid", center, radii, intensity))
        else:
            p0 = rng.uniform(0.2, 0.8, size=3) * extent
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            p2 = np.clip(p0 + direction * rng.uniform(25.0, 55.0), 0.1 * extent, 0.9 * extent)
            mid = 0.5 * (p0 + p2) + rng.standard_normal(3) * 6.0
            radius = float(rng.uniform(1.5, 4.0))
            landmarks.append(
                Landmark("tube", tuple(mid), (radius, radius, radius), intensity,
                         endpoints=(tuple(p0), tuple(p2)))
            )
    return landmarks


def make_phantom(
    seed: int,
    size: int = 128,
    spacing_mm: float = 0.7,
    n_landmarks: int = 8,
    landmarks: list[Landmark] | None = None,
) -> Phantom:
    """Build a speckle phantom; deterministic in (seed, size, spacing).

    The base texture is band-pass filtered Gaussian noise standardized to
    unit variance and mapped around 0.5, clipped to [0, 1]. Landmarks (by
    default ``n_landmarks`` random ones, or an explicit list) are added as
    smooth intensity offsets.
    """
    if size < 32:
        raise ValueError("phantom size must be at least 32 voxels per axis")
    if spacing_mm <= 0:
        raise ValueError("voxel spacing must be positive")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((size, size, size))
    band = ndimage.gaussian_filter(noise, 1.0) - ndimage.gaussian_filter(noise, 2.0)
    band = (band - band.mean()) / band.std()
    vol = 0.5 + 0.16 * band
    extent = (size - 1) * spacing_mm * np.ones(3)
    if landmarks is None:
        landmarks = _random_landmarks(rng, extent, n_landmarks)
    for lm in landmarks:
        add_landmark(vol, spacing_mm, lm)
    np.clip(vol, 0.0, 1.0, out=vol)
    return Phantom(volume=vol.astype(np.float32), voxel_spacing=spacing_mm, landmarks=list(landmarks))


@dataclasses.dataclass(frozen=True)
class TrajectorySpec:
    family: str
    length_mm: float = 40.0
    num_frames: int = 64
    rot_amp_deg: float = 0.4   # per-step rotation amplitude
    seed: int = 0

    def __post_init__(self):
        if self.family not in TRAJECTORY_FAMILIES:
            raise ValueError(f"family must be one of {TRAJECTORY_FAMILIES}")
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        if self.length_mm <= 0:
            raise ValueError("length_mm must be positive")


def _step_params(spec: TrajectorySpec, rng: np.random.Generator) -> np.ndarray:
    """Per-step relative 6-DoF parameters (K, 6) in the moving probe frame."""
    k = spec.num_frames - 1
    steps = np.zeros((k, 6))
    phase = np.arange(k) / max(k - 1, 1)
    if spec.family == "linear":
        steps[:, 2] = 1.0
    elif spec.family == "c-shape":
        steps[:, 2] = 1.0
        steps[:, 3] = spec.rot_amp_deg                                  # steady turn about x
        steps[:, 5] = 0.3 * spec.rot_amp_deg * np.sin(2 * np.pi * phase)  # in-plane wobble
    else:  # s-shape: out-of-plane component reverses sign once
        steps[:, 0] = 0.8
        steps[:, 2] = 0.6 * np.cos(np.pi * phase)
        steps[:, 5] = spec.rot_amp_deg * np.sin(2 * np.pi * phase)
    # Small seeded jitter so sweeps with the same family are not clones.
    steps[:, 0] += 0.01 * rng.standard_normal(k)
    steps[:, 1] += 0.01 * rng.standard_normal(k)
    steps[:, 3:] += 0.02 * spec.rot_amp_deg * rng.standard_normal((k, 3))
    norms = np.linalg.norm(steps[:, :3], axis=1)
    steps[:, :3] *= spec.length_mm / norms.sum()
    return steps


def make_trajectory(
    spec: TrajectorySpec,
    bounds_mm=None,
    frame_extent_mm: tuple[float, float] = (0.0, 0.0),
    margin_mm: float = 1.5,
) -> np.ndarray:
    """Generate an (N, 4, 4) probe trajectory for one synthetic sweep.

    When ``bounds_mm`` (per-axis world extent, e.g. ``Phantom.bounds_mm``)
    is given, the swept image rectangle of size ``frame_extent_mm`` (probe
    x/y, i.e. ``(width-1)*sx, (height-1)*sy``) is translated to fit inside
    the bounds with ``margin_mm`` clearance and a seeded offset within the
    remaining slack; a path that cannot fit raises GenerationError.
    """
    from . import geometry

    rng = np.random.default_rng(spec.seed)
    steps = _step_params(spec, rng)
    norms = np.linalg.norm(steps[:, :3], axis=1)
    if norms.min() < MIN_STEP_MM or norms.max() > MAX_STEP_MM:
        raise GenerationError(
            f"adjacent-frame steps [{norms.min():.3f}, {norms.max():.3f}] mm are outside "
            f"[{MIN_STEP_MM}, {MAX_STEP_MM}] mm; adjust length_mm/num_frames"
        )
    # Base orientation: probe z (out-of-plane) along world +x, image plane in world y-z,
    # with a small seeded tilt.
    base = np.eye(4)
    base[:3, :3] = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).T
    tilt = geometry.params_to_matrix(np.concatenate([np.zeros(3), rng.uniform(-4.0, 4.0, 3)]))
    start = geometry.compose(base, tilt)
    traj = geometry.compose_trajectory(steps, start)
    if bounds_mm is not None:
        bounds_mm = np.asarray(bounds_mm, dtype=np.float64)
        ex, ey = frame_extent_mm
        corners = np.array([
            [0.0, 0.0, 0.0, 1.0],
            [ex, 0.0, 0.0, 1.0],
            [0.0, ey, 0.0, 1.0],
            [ex, ey, 0.0, 1.0],
        ])
        swept = np.einsum("nij,cj->nci", traj, corners)[..., :3].reshape(-1, 3)
        lo, hi = swept.min(axis=0), swept.max(axis=0)
        slack = (bounds_mm - 2 * margin_mm) - (hi - lo)
        if np.any(slack < 0):
            raise GenerationError(
                f"swept footprint {np.round(hi - lo, 2)} mm does not fit in bounds "
                f"{np.round(bounds_mm, 2)} mm with margin {margin_mm} mm"
            )
        shift = margin_mm - lo + slack * rng.uniform(0.25, 0.75, size=3)
        offset = np.eye(4)
        offset[:3, 3] = shift
        traj = np.stack([geometry.compose(offset, T) for T in traj])
    return traj


def render_sweep(
    phantom: Phantom,
    traj,
    cal: Calibration,
    width: int,
    height: int,
    noise_level: float = 0.0,
    seed: int = 0,
    sweep_id: str = "sweep",
) -> Sweep:
    """Slice the phantom along a trajectory into a labeled Sweep.

    Each frame samples the plane ``T_i @ image_to_probe`` with trilinear
    interpolation; ``noise_level`` adds per-frame multiplicative Gaussian
    noise. Any frame whose footprint leaves the volume raises
    GenerationError.
    """
    from . import geometry

    traj = geometry.require_trajectory(traj)
    rng = np.random.default_rng(seed)
    u, v = np.meshgrid(np.arange(width), np.arange(height), indexing="xy")
    pts = np.stack(
        [u.ravel() * cal.pixel_spacing[0], v.ravel() * cal.pixel_spacing[1],
         np.zeros(u.size), np.ones(u.size)]
    )
    n_vox = np.array(phantom.volume.shape)
    frames = np.empty((len(traj), height, width), dtype=np.float32)
    vol = phantom.volume.astype(np.float64)
    for i, T in enumerate(traj):
        world = (T @ cal.image_to_probe @ pts)[:3]
        coords = world / phantom.voxel_spacing
        if coords.min() < 0 or np.any(coords.max(axis=1) > n_vox - 1):
            raise GenerationError(f"frame {i} samples outside the phantom volume")
        frame = ndimage.map_coordinates(vol, coords, order=1).reshape(height, width)
        if noise_level > 0:
            frame = frame * (1.0 + noise_level * rng.standard_normal(frame.shape))
        frames[i] = np.clip(frame, 0.0, 1.0, out=frame)
    return Sweep(frames=frames, poses=traj, cal=cal, id=sweep_id)


@dataclasses.dataclass(frozen=True)
class DatasetConfig:
    """Everything needed to synthesize one train/val/test dataset."""

    n_train: int = 200
    n_val: int = 20
    n_test: int = 20
    phantom_size: int = 128
    voxel_spacing_mm: float = 0.7
    n_landmarks: int = 8
    num_frames: int = 64
    width: int = 64
    height: int = 64
    pixel_spacing_mm: tuple = (0.4, 0.4)
    length_mm: float = 40.0
    rot_amp_deg: float = 0.4
    noise_level: float = 0.03
    families: tuple = TRAJECTORY_FAMILIES
    seed: int = 0

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("every split needs at least one sweep")
        unknown = set(self.families) - set(TRAJECTORY_FAMILIES)
        if unknown:
            raise ValueError(f"unknown families {sorted(unknown)}")


def generate_sweep(cfg: DatasetConfig, family: str, seed: int, sweep_id: str) -> Sweep:
    """One phantom, one trajectory of the given family, one rendered sweep."""
    ph = make_phantom(seed=seed, size=cfg.phantom_size,
                      spacing_mm=cfg.voxel_spacing_mm, n_landmarks=cfg.n_landmarks)
    spec = TrajectorySpec(family=family, length_mm=cfg.length_mm,
                          num_frames=cfg.num_frames, rot_amp_deg=cfg.rot_amp_deg,
                          seed=seed + 1)
    cal = Calibration(pixel_spacing=tuple(cfg.pixel_spacing_mm))
    extent = ((cfg.width - 1) * cal.pixel_spacing[0], (cfg.height - 1) * cal.pixel_spacing[1])
    traj = make_trajectory(spec, bounds_mm=ph.bounds_mm, frame_extent_mm=extent)
    return render_sweep(ph, traj, cal, cfg.width, cfg.height,
                        noise_level=cfg.noise_level, seed=seed + 2, sweep_id=sweep_id)


def generate_dataset(root, cfg: DatasetConfig, progress=None) -> dict:
    """Write a full dataset under ``root``; returns the split index.

    Sweep ids are ``{split}_{family}_{ordinal}``; families rotate so every
    split contains each family. ``progress`` (if given) is called with
    (done, total) after each sweep.
    """
    from . import data

    root_path = Path(root)
    splits = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    index = {}
    total = sum(splits.values())
    done = 0
    seed_stream = np.random.SeedSequence(cfg.seed)
    seeds = seed_stream.generate_state(total * 2).astype(np.int64)
    for split, count in splits.items():
        ids = []
        for k in range(count):
            family = cfg.families[k % len(cfg.families)]
            sweep_id = f"{split}_{family.replace('-', '')}_{k:03d}"
            seed = int(seeds[done]) % (2**31)
            sweep = generate_sweep(cfg, family, seed, sweep_id)
            data.save_sweep(sweep, root_path / sweep_id)
            ids.append(sweep_id)
            done += 1
            if progress is not None:
                progress(done, total)
        index[split] = ids
    data.write_index(root_path, index)
    return index
