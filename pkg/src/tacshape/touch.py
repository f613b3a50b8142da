"""Geometric touch simulation: press a virtual sensor onto a mesh, render the
contact depth image, and extract the ground-truth local point cloud.

Sensor frame: z points back toward where the sensor came from (opposite the
approach direction), x is the normalized projection of world-x onto the
sensor plane (world-y fallback near degeneracy), y = z × x. Pixel (row, col)
covers u = -r + (col+0.5)*pitch along x and v = r - (row+0.5)*pitch along y
with pitch = 2*footprint_radius / image_size (row 0 at the +y edge).

Depth images store clamp(penetration / max_press_depth, 0, 1): the
penetration of a pixel is how far the sensor plane has moved past the
surface along the approach, i.e. the nearest mesh intersection along +z
from the plane point. The press stopping rule follows the mean image
intensity on a 0-255 scale.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoContactError, ParseError
from .mesh import Pose, TriangleMesh
from .rng import rng_from, subseed
from .spatial import ray_all_hits, ray_intersect_batch

SPHERE_RADIUS = 1.3  # virtual sampling sphere around the normalized object


@dataclass(frozen=True)
class SensorSpec:
    footprint_radius: float = 0.15
    image_size: int = 64
    max_press_depth: float = 0.04
    intensity_threshold: float = 1.0
    step: float = 0.005

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if self.footprint_radius <= 0 or self.step <= 0 or self.max_press_depth <= 0:
            raise ValueError("footprint_radius, step and max_press_depth must be positive")
        if not 0.0 <= self.intensity_threshold <= 255.0:
            raise ValueError("intensity_threshold must lie in [0, 255]")

    @property
    def pitch(self) -> float:
        return 2.0 * self.footprint_radius / self.image_size


@dataclass
class TactileImage:
    depth: np.ndarray  # (S, S) float32 in [0, 1]
    pose: Pose

    def mean_intensity(self) -> float:
        """Mean pixel value rescaled to the 0-255 intensity range."""
        return float(np.mean(self.depth, dtype=np.float64) * 255.0)


@dataclass
class TouchRecord:
    image: TactileImage
    pose: Pose
    cloud_points: np.ndarray
    cloud_normals: np.ndarray
    shape_id: int


def sample_touch_ray(mesh: TriangleMesh, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Ray from a uniform point on the virtual sphere toward the object center."""
    rng = rng_from(seed, 0x7C)
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    origin = SPHERE_RADIUS * v
    return origin, -v


def sensor_pose(origin: np.ndarray, direction: np.ndarray, advance: float) -> Pose:
    """Sensor frame with the plane center advanced along the approach."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    z = -d
    ref = np.array([1.0, 0.0, 0.0])
    x = ref - np.dot(ref, z) * z
    if np.linalg.norm(x) < 1e-6:
        ref = np.array([0.0, 1.0, 0.0])
        x = ref - np.dot(ref, z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=1)
    return Pose(rot, np.asarray(origin, dtype=np.float64) + advance * d)


def pixel_plane_points(pose: Pose, spec: SensorSpec) -> np.ndarray:
    """(S*S, 3) world positions of pixel centers on the sensor plane."""
    s = spec.image_size
    r = spec.footprint_radius
    u = -r + (np.arange(s) + 0.5) * spec.pitch
    v = r - (np.arange(s) + 0.5) * spec.pitch
    uu, vv = np.meshgrid(u, v)  # vv varies along rows
    local = np.stack([uu.ravel(), vv.ravel(), np.zeros(s * s)], axis=1)
    return pose.apply(local)


def render_depth(mesh: TriangleMesh, pose: Pose, spec: SensorSpec) -> TactileImage:
    """Orthographic contact depth at the pose; 0 where the surface is ahead of
    or missing from a pixel's +z ray."""
    pts = pixel_plane_points(pose, spec)
    zaxis = pose.rotation[:, 2]
    dirs = np.broadcast_to(zaxis, pts.shape)
    t, tri = ray_intersect_batch(mesh, pts, dirs)
    pen = np.where(tri >= 0, t, 0.0)
    depth = np.clip(pen / spec.max_press_depth, 0.0, 1.0)
    s = spec.image_size
    return TactileImage(depth.reshape(s, s).astype(np.float32), pose)


def press(mesh: TriangleMesh, origin: np.ndarray, direction: np.ndarray, spec: SensorSpec,
          shape_id: int = 0, cloud_points: int = 256, seed: int = 0) -> TouchRecord:
    """Advance the sensor plane along the ray until the mean image intensity
    crosses the threshold; record image, pose and ground-truth local cloud.

    Raises NoContactError when the plane passes the object's far bounding
    plane without reaching the threshold.
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    d = d / np.linalg.norm(d)

    start = sensor_pose(origin, d, 0.0)
    pts = pixel_plane_points(start, spec)
    dirs = np.broadcast_to(d, pts.shape)
    ts, counts = ray_all_hits(mesh, pts, dirs)
    far = float(((mesh.vertices - origin) @ d).max())
    if not np.any(counts > 0):
        raise NoContactError("footprint rays miss the mesh")

    t_first = ts[:, 0].min()
    k = max(1, int(np.floor(t_first / spec.step)) + 1)
    mpd = spec.max_press_depth
    n_px = ts.shape[0]
    while True:
        a = k * spec.step
        if a > far + spec.step:
            raise NoContactError("threshold not reached before the far bounding plane")
        last_below = (ts < a).sum(axis=1) - 1
        pen = np.where(last_below >= 0, a - ts[np.arange(n_px), np.maximum(last_below, 0)], 0.0)
        mean255 = np.mean(np.clip(pen / mpd, 0.0, 1.0), dtype=np.float64) * 255.0
        if mean255 > spec.intensity_threshold:
            break
        k += 1

    pose = sensor_pose(origin, d, a)
    image = render_depth(mesh, pose, spec)
    if image.mean_intensity() <= spec.intensity_threshold:
        raise NoContactError("inconsistent contact (pass-through thinner than one step)")
    cpts, cnrm = extract_local_cloud(mesh, pose, spec, cloud_points, subseed(seed, 0xC1))
    return TouchRecord(image, pose, cpts, cnrm, shape_id)


def extract_local_cloud(mesh: TriangleMesh, pose: Pose, spec: SensorSpec,
                        n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted surface samples restricted to the contact neighborhood.

    Kept region (sensor frame): projection inside the footprint disk,
    z in [-footprint_radius, +max_press_depth], sensor-facing triangles.
    Normals are face normals (all sensor-facing by construction).
    """
    r = spec.footprint_radius
    z_lo, z_hi = -r, spec.max_press_depth
    inv = pose.inverse()
    local_v = inv.apply(mesh.vertices)
    corners = local_v[mesh.faces]  # (m, 3, 3)

    zaxis = pose.rotation[:, 2]
    facing = mesh.face_normals() @ zaxis > 0.0
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)
    near = (lo[:, 2] <= z_hi) & (hi[:, 2] >= z_lo)
    # conservative disk overlap test on the xy bounding box
    cx = np.clip(0.0, lo[:, 0], hi[:, 0])
    cy = np.clip(0.0, lo[:, 1], hi[:, 1])
    near &= cx ** 2 + cy ** 2 <= r ** 2
    cand = np.nonzero(facing & near)[0]
    if len(cand) == 0:
        raise NoContactError("no sensor-facing geometry inside the footprint")

    ccorners = corners[cand]
    cross = np.cross(ccorners[:, 1] - ccorners[:, 0], ccorners[:, 2] - ccorners[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    if areas.sum() <= 0:
        raise NoContactError("degenerate candidate area inside the footprint")
    prob = areas / areas.sum()

    rng = rng_from(seed, 0xEC)
    got_p: list[np.ndarray] = []
    got_f: list[np.ndarray] = []
    total = 0
    for _ in range(200):
        m = max(4 * n, 1024)
        tri = rng.choice(len(cand), size=m, p=prob)
        u = rng.random(m)
        v = rng.random(m)
        flip = u + v > 1.0
        u[flip] = 1.0 - u[flip]
        v[flip] = 1.0 - v[flip]
        c = ccorners[tri]
        p = c[:, 0] + u[:, None] * (c[:, 1] - c[:, 0]) + v[:, None] * (c[:, 2] - c[:, 0])
        keep = (p[:, 0] ** 2 + p[:, 1] ** 2 <= r ** 2) & (p[:, 2] >= z_lo) & (p[:, 2] <= z_hi)
        got_p.append(p[keep])
        got_f.append(cand[tri[keep]])
        total += int(keep.sum())
        if total >= n:
            break
    if total < n:
        raise NoContactError("footprint region has negligible surface area")
    local = np.concatenate(got_p)[:n]
    fidx = np.concatenate(got_f)[:n]
    return pose.apply(local), mesh.face_normals()[fidx].copy()


def back_project(image: TactileImage, spec: SensorSpec) -> np.ndarray:
    """World positions of unsaturated contact pixels (0 < depth < 1)."""
    pts = pixel_plane_points(image.pose, spec)
    depth = image.depth.reshape(-1).astype(np.float64)
    sel = (depth > 0.0) & (depth < 1.0)
    z = image.pose.rotation[:, 2]
    return pts[sel] + (depth[sel] * spec.max_press_depth)[:, None] * z


# ---------------------------------------------------------------------------
# archive format "TTCH" (little-endian): magic, u32 version=1, u64 count;
# per record: u64 shape_id, 12 float64 pose (rotation row-major, translation),
# u32 image_size, float32 image row-major, u32 cloud count, float32 cloud
# (points rows then normals rows).

_MAGIC = b"TTCH"
_VERSION = 1


def save_touches(path: str | Path, records: list[TouchRecord]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(records)))
        for rec in records:
            fh.write(struct.pack("<Q", rec.shape_id))
            fh.write(rec.pose.rotation.astype("<f8").tobytes())
            fh.write(rec.pose.translation.astype("<f8").tobytes())
            s = rec.image.depth.shape[0]
            fh.write(struct.pack("<I", s))
            fh.write(rec.image.depth.astype("<f4").tobytes())
            fh.write(struct.pack("<I", len(rec.cloud_points)))
            fh.write(rec.cloud_points.astype("<f4").tobytes())
            fh.write(rec.cloud_normals.astype("<f4").tobytes())


def load_touches(path: str | Path) -> list[TouchRecord]:
    records = []
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ParseError(f"{path}: bad archive magic")
        version, count = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ParseError(f"{path}: unsupported archive version {version}")
        for _ in range(count):
            (shape_id,) = struct.unpack("<Q", fh.read(8))
            pose_data = np.frombuffer(fh.read(96), dtype="<f8")
            pose = Pose(pose_data[:9].reshape(3, 3), pose_data[9:])
            (s,) = struct.unpack("<I", fh.read(4))
            depth = np.frombuffer(fh.read(4 * s * s), dtype="<f4").reshape(s, s).copy()
            (cn,) = struct.unpack("<I", fh.read(4))
            pts = np.frombuffer(fh.read(12 * cn), dtype="<f4").reshape(cn, 3).astype(np.float64)
            nrm = np.frombuffer(fh.read(12 * cn), dtype="<f4").reshape(cn, 3).astype(np.float64)
            records.append(TouchRecord(TactileImage(depth, pose), pose, pts, nrm, int(shape_id)))
    return records


def save_pgm(path: str | Path, image: TactileImage) -> None:
    """8-bit binary PGM of a depth image for visual inspection."""
    s = image.depth.shape[0]
    data = np.round(image.depth.astype(np.float64) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{s} {s}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
