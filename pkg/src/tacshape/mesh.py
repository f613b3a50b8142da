"""Triangle meshes: OBJ I/O, normalization, watertightness, surface sampling.

Conventions: vertices are float64 (n, 3) arrays, faces int64 (m, 3) arrays of
vertex indices with counter-clockwise winding seen from outside. All lengths
are in object-normalized units (see `normalize_mesh`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateMeshError, NonManifoldError, ParseError
from .rng import rng_from


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x_world = rotation @ x_local + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.rotation.T + self.translation

    def apply_vec(self, vectors: np.ndarray) -> np.ndarray:
        vecs = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        return vecs @ self.rotation.T

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first, then `self`."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    _watertight: bool | None = field(default=None, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        self.faces = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    @property
    def watertight(self) -> bool:
        if self._watertight is None:
            self._watertight = _is_watertight(self.faces)
        return self._watertight

    def triangle_corners(self) -> np.ndarray:
        """(m, 3, 3) array of face corner positions."""
        if "corners" not in self._cache:
            self._cache["corners"] = np.ascontiguousarray(self.vertices[self.faces])
        return self._cache["corners"]

    def face_areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            c = self.triangle_corners()
            cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
            self._cache["areas"] = 0.5 * np.linalg.norm(cross, axis=1)
        return self._cache["areas"]

    def face_normals(self) -> np.ndarray:
        """Unit face normals; degenerate faces get a zero vector."""
        if "normals" not in self._cache:
            c = self.triangle_corners()
            cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
            norm = np.linalg.norm(cross, axis=1, keepdims=True)
            self._cache["normals"] = np.where(norm > 1e-300, cross / np.maximum(norm, 1e-300), 0.0)
        return self._cache["normals"]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            raise DegenerateMeshError("empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _is_watertight(faces: np.ndarray) -> bool:
    """Closed 2-manifold test: every undirected edge shared by exactly two
    faces and every directed edge used exactly once (consistent winding)."""
    if len(faces) == 0:
        return False
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    directed = e[:, 0] * (faces.max() + 1) + e[:, 1]
    if len(np.unique(directed)) != len(directed):
        return False
    und = np.sort(e, axis=1)
    _, counts = np.unique(und[:, 0] * (faces.max() + 1) + und[:, 1], return_counts=True)
    return bool(np.all(counts == 2))


def load_mesh(path: str | Path, require_watertight: bool = False) -> TriangleMesh:
    """Load a Wavefront OBJ (`v`/`f` records; positions only).

    Polygon faces are fan-triangulated. Raises ParseError on malformed
    records (including 0 indices: OBJ is 1-based) and NonManifoldError when
    `require_watertight` is set and the mesh is not a closed 2-manifold.
    """
    path = Path(path)
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: face needs at least 3 vertices")
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/", 1)[0]
                    try:
                        i = int(head)
                    except ValueError as exc:
                        raise ParseError(f"{path}:{lineno}: bad face index {tok!r}") from exc
                    if i == 0:
                        raise ParseError(f"{path}:{lineno}: OBJ indices are 1-based, got 0")
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
            # all other records (vn, vt, usemtl, ...) are ignored
    if not verts:
        raise ParseError(f"{path}: no vertices")
    varr = np.asarray(verts, dtype=np.float64)
    farr = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(farr) and (farr.min() < 0 or farr.max() >= len(varr)):
        raise ParseError(f"{path}: face index out of range")
    mesh = TriangleMesh(varr, farr)
    if require_watertight and not mesh.watertight:
        raise NonManifoldError(f"{path}: mesh is not a closed 2-manifold")
    return mesh


def save_mesh(mesh: TriangleMesh, path: str | Path) -> None:
    """Write a mesh as ASCII OBJ with deterministic formatting."""
    lines = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in mesh.vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def normalize_mesh(mesh: TriangleMesh) -> tuple[TriangleMesh, float, np.ndarray]:
    """Center on the bounding-box center and scale the max vertex radius to 1.

    Returns (normalized mesh, scale, offset) with
    original = normalized / scale + offset.
    """
    if len(mesh.vertices) == 0:
        raise DegenerateMeshError("cannot normalize an empty mesh")
    lo, hi = mesh.bounds()
    offset = 0.5 * (lo + hi)
    centered = mesh.vertices - offset
    radius = np.linalg.norm(centered, axis=1).max()
    if radius <= 0.0:
        raise DegenerateMeshError("mesh has zero extent")
    scale = 1.0 / radius
    out = TriangleMesh(centered * scale, mesh.faces.copy())
    out._watertight = mesh._watertight
    return out, scale, offset


def surface_area(mesh: TriangleMesh) -> float:
    return float(mesh.face_areas().sum())


def sample_surface(mesh: TriangleMesh, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample n points uniformly by area; returns (points (n,3), normals (n,3)).

    Triangles are drawn area-proportionally, positions uniformly in
    barycentric coordinates; normals come from the face planes.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0.0:
        raise DegenerateMeshError("mesh has zero surface area")
    rng = rng_from(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    c = mesh.triangle_corners()[tri]
    pts = c[:, 0] + u[:, None] * (c[:, 1] - c[:, 0]) + v[:, None] * (c[:, 2] - c[:, 0])
    return pts, mesh.face_normals()[tri].copy()
