"""On-disk sweep format, loaders, and subsequence samplers.

A sweep directory holds exactly three files:

- ``meta.json``: shape ``[N, H, W]``, dtype (always "float32"), pixel
  spacing, the 4x4 image-to-probe calibration (16 floats, row-major) and
  the payload file names.
- ``frames.bin``: frame-major, row-major, little-endian float32 pixels.
- ``poses.csv``: header ``tx,ty,tz,rx,ry,rz``; one row per frame with the
  absolute world pose as 6-DoF parameters (mm / degrees, Z-Y-X intrinsic).

A dataset root is a directory of sweep directories plus an ``index.json``
mapping split names (train/val/test) to sweep ids.

Two samplers realize the two training timescales: contiguous full
resolution windows for the local encoder, and sorted non-contiguous draws
at a reduced resolution for the global encoder. Samples always carry the
absolute source-frame indices so positional encodings can reflect true
temporal gaps.
"""

from __future__ import annotations

import dataclasses
import functools
import json
from pathlib import Path

import numpy as np

from . import geometry
from .metrics import Calibration

META_NAME = "meta.json"
FRAMES_NAME = "frames.bin"
POSES_NAME = "poses.csv"
INDEX_NAME = "index.json"
POSES_HEADER = "tx,ty,tz,rx,ry,rz"


class SweepFormatError(Exception):
    """Base class for malformed on-disk sweeps."""


class SweepMetaError(SweepFormatError):
    """meta.json missing, unparseable, or inconsistent."""


class SweepShapeError(SweepFormatError):
    """frames.bin byte count disagrees with the metadata shape."""


class SweepPoseError(SweepFormatError):
    """poses.csv has the wrong schema or non-finite values."""


@dataclasses.dataclass
class Sweep:
    """One labeled scan: frames, ground-truth world poses, calibration."""

    frames: np.ndarray   # (N, H, W) float32 in [0, 1]
    poses: np.ndarray    # (N, 4, 4) float64
    cal: Calibration
    id: str = "sweep"

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3 or self.frames.shape[0] < 2:
            raise ValueError("frames must be (N, H, W) with N >= 2")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ValueError("frame values must lie in [0, 1]")
        self.poses = geometry.require_trajectory(self.poses, name="poses")
        if len(self.poses) != len(self.frames):
            raise ValueError("poses and frames must have equal length")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


def write_poses_csv(path, poses) -> Path:
    """Write a trajectory as parameter rows under the canonical header."""
    path = Path(path)
    rows = [POSES_HEADER]
    for T in poses:
        p = geometry.matrix_to_params(T)
        rows.append(",".join(f"{v:.17g}" for v in p))
    path.write_text("\n".join(rows) + "\n")
    return path


def save_sweep(sweep: Sweep, directory) -> Path:
    """Write a sweep directory; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n, h, w = sweep.frames.shape
    meta = {
        "id": sweep.id,
        "shape": [n, h, w],
        "dtype": "float32",
        **sweep.cal.to_dict(),
        "files": {"frames": FRAMES_NAME, "poses": POSES_NAME},
    }
    (directory / META_NAME).write_text(json.dumps(meta, indent=1))
    sweep.frames.astype("<f4").tofile(directory / FRAMES_NAME)
    write_poses_csv(directory / POSES_NAME, sweep.poses)
    return directory


def load_sweep(directory) -> Sweep:
    """Load a sweep directory; raises a SweepFormatError subclass on damage."""
    directory = Path(directory)
    meta_path = directory / META_NAME
    if not meta_path.is_file():
        raise SweepMetaError(f"missing {META_NAME} in {directory}")
    try:
        meta = json.loads(meta_path.read_text())
        n, h, w = (int(v) for v in meta["shape"])
        dtype = meta["dtype"]
        cal = Calibration.from_dict(meta)
        files = meta["files"]
        sweep_id = meta["id"]
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise SweepMetaError(f"malformed {META_NAME} in {directory}: {exc}") from exc
    if dtype != "float32":
        raise SweepMetaError(f"unsupported frame dtype {dtype!r}")

    frames_path = directory / files["frames"]
    expected = n * h * w * 4
    actual = frames_path.stat().st_size if frames_path.is_file() else -1
    if actual != expected:
        raise SweepShapeError(
            f"{frames_path.name}: expected {expected} bytes for shape {(n, h, w)}, got {actual}"
        )
    frames = np.fromfile(frames_path, dtype="<f4").reshape(n, h, w)

    poses_path = directory / files["poses"]
    if not poses_path.is_file():
        raise SweepPoseError(f"missing {poses_path.name}")
    lines = poses_path.read_text().strip().splitlines()
    if not lines or lines[0].strip() != POSES_HEADER:
        raise SweepPoseError(f"poses header must be {POSES_HEADER!r}")
    if len(lines) - 1 != n:
        raise SweepPoseError(f"expected {n} pose rows, got {len(lines) - 1}")
    params = np.empty((n, 6))
    for i, line in enumerate(lines[1:]):
        cols = line.split(",")
        if len(cols) != 6:
            raise SweepPoseError(f"pose row {i} has {len(cols)} columns, expected 6")
        try:
            params[i] = [float(c) for c in cols]
        except ValueError as exc:
            raise SweepPoseError(f"pose row {i} is not numeric: {exc}") from exc
    if not np.all(np.isfinite(params)):
        raise SweepPoseError("pose parameters contain non-finite values")
    poses = np.stack([geometry.params_to_matrix(p) for p in params])
    return Sweep(frames=frames, poses=poses, cal=cal, id=sweep_id)


@functools.lru_cache(maxsize=128)
def area_resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix averaging input cells by overlap."""
    weights = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for j in range(n_out):
        a, b = j * scale, (j + 1) * scale
        for i in range(int(np.floor(a)), min(int(np.ceil(b)), n_in)):
            weights[j, i] = (min(b, i + 1.0) - max(a, float(i))) / scale
    return weights


def area_resample(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Deterministic area-average resize of one (H, W) image."""
    h_out, w_out = out_hw
    wy = area_resample_matrix(img.shape[0], h_out)
    wx = area_resample_matrix(img.shape[1], w_out)
    return (wy @ img.astype(np.float64) @ wx.T).astype(img.dtype)


def area_resample_torch(frames, out_hw: tuple[int, int]):
    """Same resize for torch tensors shaped (..., H, W), same weights."""
    import torch

    h_out, w_out = out_hw
    wy = torch.from_numpy(area_resample_matrix(frames.shape[-2], h_out)).to(frames.dtype)
    wx = torch.from_numpy(area_resample_matrix(frames.shape[-1], w_out)).to(frames.dtype)
    return wy @ frames @ wx.T


def subsample_evenly(n_frames, stride: int) -> np.ndarray:
    """Indices 0, stride, 2*stride, ... with the last frame always included."""
    if hasattr(n_frames, "num_frames"):
        n_frames = n_frames.num_frames
    n = int(n_frames)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    idx = np.arange(0, n, stride, dtype=np.int64)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


@dataclasses.dataclass
class SubsequenceSample:
    """One sampled row: frames, their absolute indices, and step targets."""

    frames: np.ndarray    # (L, h, w) float32
    indices: np.ndarray   # (L,) int64, strictly increasing
    targets: np.ndarray   # (L-1, 6) float64: params of T[idx_k] -> T[idx_{k+1}]


def relative_targets(poses: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """(len(indices)-1, 6) motion params between consecutive listed frames."""
    out = np.empty((len(indices) - 1, 6))
    for k in range(len(indices) - 1):
        rel = geometry.relative_transform(poses[indices[k]], poses[indices[k + 1]])
        out[k] = geometry.matrix_to_params(rel)
    return out


def sample_local_subsequence(
    sweep: Sweep, length: int = 16, rng: np.random.Generator | None = None
) -> SubsequenceSample:
    """Uniform-random contiguous window at full resolution."""
    rng = rng or np.random.default_rng()
    n = sweep.num_frames
    if length < 2 or length > n:
        raise ValueError(f"window length {length} invalid for sweep of {n} frames")
    start = int(rng.integers(0, n - length + 1))
    indices = np.arange(start, start + length, dtype=np.int64)
    return SubsequenceSample(
        frames=sweep.frames[start:start + length],
        indices=indices,
        targets=relative_targets(sweep.poses, indices),
    )


def sample_global_subsequence(
    sweep: Sweep,
    count: int,
    rng: np.random.Generator | None = None,
    resolution: tuple[int, int] | None = None,
) -> SubsequenceSample:
    """Sorted draw without replacement; frames resampled to ``resolution``.

    Targets are the relative transforms between consecutive *sampled*
    frames, so the model must reason over variable temporal gaps.
    """
    rng = rng or np.random.default_rng()
    n = sweep.num_frames
    if count < 2 or count > n:
        raise ValueError(f"count {count} invalid for sweep of {n} frames")
    indices = np.sort(rng.choice(n, size=count, replace=False)).astype(np.int64)
    frames = sweep.frames[indices]
    if resolution is not None and tuple(resolution) != frames.shape[1:]:
        frames = np.stack([area_resample(f, resolution) for f in frames])
    return SubsequenceSample(frames=frames, indices=indices,
                             targets=relative_targets(sweep.poses, indices))


@dataclasses.dataclass
class SubsequenceBatch:
    """Stacked samples, padded to a common length when necessary."""

    frames: np.ndarray    # (B, L, h, w) float32
    indices: np.ndarray   # (B, L) int64
    targets: np.ndarray   # (B, L-1, 6) float64
    mask: np.ndarray      # (B, L) bool, True where the position is real


def stack_samples(samples: list[SubsequenceSample]) -> SubsequenceBatch:
    max_len = max(len(s.indices) for s in samples)
    b = len(samples)
    h, w = samples[0].frames.shape[1:]
    frames = np.zeros((b, max_len, h, w), dtype=np.float32)
    indices = np.zeros((b, max_len), dtype=np.int64)
    targets = np.zeros((b, max_len - 1, 6), dtype=np.float64)
    mask = np.zeros((b, max_len), dtype=bool)
    for i, s in enumerate(samples):
        L = len(s.indices)
        frames[i, :L] = s.frames
        indices[i, :L] = s.indices
        targets[i, :L - 1] = s.targets
        mask[i, :L] = True
    return SubsequenceBatch(frames=frames, indices=indices, targets=targets, mask=mask)


def write_index(root, splits: dict[str, list[str]]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / INDEX_NAME
    path.write_text(json.dumps({k: list(v) for k, v in splits.items()}, indent=1))
    return path


def read_index(root) -> dict[str, list[str]]:
    path = Path(root) / INDEX_NAME
    if not path.is_file():
        raise FileNotFoundError(f"no {INDEX_NAME} under {root}")
    return json.loads(path.read_text())


class SweepDataset:
    """A directory of sweep directories with train/val/test membership."""

    def __init__(self, root):
        self.root = Path(root)
        self.splits = read_index(self.root)

    def ids(self, split: str) -> list[str]:
        if split not in self.splits:
            raise KeyError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return list(self.splits[split])

    def load(self, sweep_id: str) -> Sweep:
        return load_sweep(self.root / sweep_id)

    def sweeps(self, split: str):
        for sweep_id in self.ids(split):
            yield self.load(sweep_id)
