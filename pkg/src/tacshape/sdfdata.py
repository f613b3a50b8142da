"""Signed-distance training data: sampling around a mesh and binary file I/O.

File format "TSDF" (little-endian): magic b"TSDF", u32 version=1, u64 count,
then count records of 4 float32 (x, y, z, s).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import NonWatertightError, ParseError
from .mesh import TriangleMesh, sample_surface
from .rng import rng_from, subseed
from .spatial import signed_distance

_MAGIC = b"TSDF"
_VERSION = 1

UNIFORM_HALF_EXTENT = 1.1  # sampling cube, slightly larger than the unit ball


def generate_sdf_dataset(mesh: TriangleMesh, n_surface: int, n_uniform: int,
                         sigma_near: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample (points, signed distances) for decoder training.

    Each of the n_surface area-uniform surface points is perturbed twice,
    with isotropic Gaussian noise of std sigma_near and sigma_near / 10
    (coarse + fine shell), plus n_uniform points uniform in
    [-1.1, 1.1]^3. Returns (points (n, 3) float64, s (n,) float64) with
    n = 2 * n_surface + n_uniform. Deterministic given seed.
    """
    if not mesh.watertight:
        raise NonWatertightError("SDF dataset requires a watertight mesh")
    radius = np.linalg.norm(mesh.vertices, axis=1).max()
    if radius > 1.0 + 1e-6:
        raise ValueError("mesh must be normalized (max vertex radius <= 1)")
    rng = rng_from(seed, 0xD5)
    pts_parts = []
    if n_surface > 0:
        # surface sampling gets its own stream so noise and positions don't couple
        surf, _ = sample_surface(mesh, n_surface, subseed(seed, 0x5F))
        for sigma in (sigma_near, sigma_near / 10.0):
            noise = rng.normal(scale=sigma, size=(n_surface, 3)) if sigma > 0 else np.zeros((n_surface, 3))
            pts_parts.append(surf + noise)
    if n_uniform > 0:
        pts_parts.append(rng.uniform(-UNIFORM_HALF_EXTENT, UNIFORM_HALF_EXTENT, size=(n_uniform, 3)))
    pts = np.concatenate(pts_parts) if pts_parts else np.zeros((0, 3))
    s = signed_distance(mesh, pts) if len(pts) else np.zeros(0)
    return pts, np.asarray(s)


def save_sdf_dataset(path: str | Path, points: np.ndarray, s: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    sv = np.asarray(s, dtype=np.float32).reshape(-1)
    if len(pts) != len(sv):
        raise ValueError("points and distances must have equal length")
    rows = np.hstack([pts, sv[:, None]]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(rows)))
        fh.write(rows.tobytes())


def load_sdf_dataset(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}")
        version, count = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ParseError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(count * 16), dtype="<f4").reshape(count, 4)
    return data[:, :3].astype(np.float64), data[:, 3].astype(np.float64)
