"""Trajectory-guided volume compounding and its on-disk format.

Compounding splats every frame pixel into the nearest voxel of a regular
grid; later frames overwrite earlier ones where they collide. The format
is a raw little-endian float32 block (x-major, then y, then z) plus a
JSON sidecar with grid geometry and a fill mask summary.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from . import geometry
from .data import Sweep

VOLUME_BIN = "volume.bin"
VOLUME_MASK = "filled.bin"
VOLUME_META = "volume.json"


class VolumeFormatError(Exception):
    """Compounded volume files are missing or inconsistent."""


@dataclasses.dataclass
class CompoundedVolume:
    values: np.ndarray        # (nx, ny, nz) float32; unfilled voxels are 0
    filled: np.ndarray        # (nx, ny, nz) bool
    voxel_spacing_mm: float
    origin_mm: np.ndarray     # (3,) world position of voxel (0, 0, 0)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.filled = np.ascontiguousarray(self.filled, dtype=bool)
        if self.values.ndim != 3 or self.values.shape != self.filled.shape:
            raise ValueError("values and filled must share one 3D shape")
        self.origin_mm = np.asarray(self.origin_mm, dtype=np.float64).reshape(3)

    @property
    def fill_fraction(self) -> float:
        return float(self.filled.mean())


def compound_sweep(sweep: Sweep, poses=None, voxel_spacing_mm: float = 0.5,
                   padding_mm: float = 1.0) -> CompoundedVolume:
    """Scatter sweep pixels into a world-aligned grid along ``poses``.

    ``poses`` defaults to the sweep's stored trajectory; pass a predicted
    one to reconstruct from estimates. The grid is sized to the swept
    bounding box plus padding.
    """
    poses = sweep.poses if poses is None else geometry.require_trajectory(poses)
    if len(poses) != sweep.num_frames:
        raise ValueError("pose count must match frame count")
    if voxel_spacing_mm <= 0:
        raise ValueError("voxel_spacing_mm must be positive")
    h, w = sweep.frame_shape
    u, v = np.meshgrid(np.arange(w), np.arange(h), indexing="xy")
    sx, sy = sweep.cal.pixel_spacing
    pix = np.stack([u.ravel() * sx, v.ravel() * sy,
                    np.zeros(u.size), np.ones(u.size)])
    plane = sweep.cal.image_to_probe @ pix
    world = np.einsum("nij,jp->nip", poses, plane)[:, :3]   # (N, 3, P)

    lo = world.min(axis=(0, 2)) - padding_mm
    hi = world.max(axis=(0, 2)) + padding_mm
    shape = np.maximum(np.ceil((hi - lo) / voxel_spacing_mm).astype(int) + 1, 1)
    values = np.zeros(shape, dtype=np.float32)
    filled = np.zeros(shape, dtype=bool)
    for i in range(sweep.num_frames):
        idx = np.rint((world[i] - lo[:, None]) / voxel_spacing_mm).astype(np.int64)
        np.clip(idx, 0, (shape - 1)[:, None], out=idx)
        values[idx[0], idx[1], idx[2]] = sweep.frames[i].ravel()
        filled[idx[0], idx[1], idx[2]] = True
    return CompoundedVolume(values=values, filled=filled,
                            voxel_spacing_mm=voxel_spacing_mm, origin_mm=lo)


def save_volume(vol: CompoundedVolume, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    vol.values.astype("<f4").tofile(directory / VOLUME_BIN)
    vol.filled.astype(np.uint8).tofile(directory / VOLUME_MASK)
    meta = {
        "shape": list(vol.values.shape),
        "dtype": "float32",
        "voxel_spacing_mm": vol.voxel_spacing_mm,
        "origin_mm": vol.origin_mm.tolist(),
        "fill_fraction": vol.fill_fraction,
        "files": {"values": VOLUME_BIN, "filled": VOLUME_MASK},
    }
    (directory / VOLUME_META).write_text(json.dumps(meta, indent=1))
    return directory


def load_volume(directory) -> CompoundedVolume:
    directory = Path(directory)
    meta_path = directory / VOLUME_META
    if not meta_path.is_file():
        raise VolumeFormatError(f"missing {VOLUME_META} in {directory}")
    try:
        meta = json.loads(meta_path.read_text())
        shape = tuple(int(s) for s in meta["shape"])
        spacing = float(meta["voxel_spacing_mm"])
        origin = np.asarray(meta["origin_mm"], dtype=np.float64)
        bin_name = meta["files"]["values"]
        mask_name = meta["files"]["filled"]
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise VolumeFormatError(f"malformed {VOLUME_META}: {exc}") from exc
    n_vox = int(np.prod(shape))
    bin_path = directory / bin_name
    actual = bin_path.stat().st_size if bin_path.is_file() else -1
    if actual != n_vox * 4:
        raise VolumeFormatError(
            f"{bin_name}: expected {n_vox * 4} bytes for shape {shape}, got {actual}")
    mask_path = directory / mask_name
    mask_actual = mask_path.stat().st_size if mask_path.is_file() else -1
    if mask_actual != n_vox:
        raise VolumeFormatError(
            f"{mask_name}: expected {n_vox} bytes for shape {shape}, got {mask_actual}")
    values = np.fromfile(bin_path, dtype="<f4").reshape(shape)
    filled = np.fromfile(mask_path, dtype=np.uint8).astype(bool).reshape(shape)
    return CompoundedVolume(values=values, filled=filled,
                            voxel_spacing_mm=spacing, origin_mm=origin)


def volume_correlation(a: CompoundedVolume, b: CompoundedVolume) -> float:
    """Pearson correlation over voxels filled in both volumes."""
    if a.values.shape != b.values.shape:
        raise ValueError("volumes must share a grid")
    both = a.filled & b.filled
    if both.sum() < 2:
        raise ValueError("volumes share too few filled voxels")
    x, y = a.values[both].astype(np.float64), b.values[both].astype(np.float64)
    x -= x.mean()
    y -= y.mean()
    denom = np.sqrt((x * x).sum() * (y * y).sum())
    if denom == 0:
        raise ValueError("constant volumes have no defined correlation")
    return float((x * y).sum() / denom)
