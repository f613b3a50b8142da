"""Procedural watertight primitives: the training/evaluation shape corpus.

Analytic families (sphere, box, cylinder, capsule) are tessellated directly;
CSG families (box-sphere-union, box-minus-sphere) are meshed by marching
cubes on their analytic signed-distance fields, validated watertight, and
retried on a resolution ladder if the fixed-table extraction left cracks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import TessellationFailureError
from .isosurface import marching_cubes, sample_grid
from .mesh import TriangleMesh, normalize_mesh
from .rng import rng_from

log = logging.getLogger(__name__)

FAMILIES = ("sphere", "box", "cylinder", "capsule", "box_sphere_union", "box_minus_sphere")

_CSG_RETRY_SCALE = (1.0, 1.34, 1.71)  # resolution ladder for crack recovery


@dataclass
class PrimitiveSpec:
    """One generated shape: family, drawn parameters, tessellation level."""

    family: str
    params: dict = field(default_factory=dict)
    tessellation: int = 3
    csg_noop: bool = False


# ---------------------------------------------------------------------------
# analytic tessellations


def box_mesh(half_extents) -> TriangleMesh:
    hx, hy, hz = np.broadcast_to(np.asarray(half_extents, dtype=np.float64), (3,))
    v = np.array([
        [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
        [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
    ])
    f = np.array([
        [0, 3, 2], [0, 2, 1],       # z-
        [4, 5, 6], [4, 6, 7],       # z+
        [0, 1, 5], [0, 5, 4],       # y-
        [2, 3, 7], [2, 7, 6],       # y+
        [0, 4, 7], [0, 7, 3],       # x-
        [1, 2, 6], [1, 6, 5],       # x+
    ])
    return TriangleMesh(v, f)


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleMesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return TriangleMesh(np.asarray(verts) * radius, np.asarray(faces, dtype=np.int64))


def cylinder_mesh(radius: float, half_height: float, segments: int = 48) -> TriangleMesh:
    theta = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    bot = np.hstack([ring, np.full((segments, 1), -half_height)])
    top = np.hstack([ring, np.full((segments, 1), half_height)])
    verts = np.vstack([bot, top, [[0, 0, -half_height]], [[0, 0, half_height]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for s in range(segments):
        sn = (s + 1) % segments
        faces += [(s, sn, segments + sn), (s, segments + sn, segments + s)]
        faces += [(cb, sn, s), (ct, segments + s, segments + sn)]
    return TriangleMesh(verts, np.asarray(faces, dtype=np.int64))


def capsule_mesh(radius: float, half_length: float, segments: int = 48, rings: int = 12) -> TriangleMesh:
    theta = 2.0 * np.pi * np.arange(segments) / segments
    cs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    rows = []
    for j in range(1, rings + 1):            # bottom hemisphere: pole -> equator
        phi = -np.pi / 2 + (np.pi / 2) * j / rings
        rows.append(np.hstack([radius * np.cos(phi) * cs,
                               np.full((segments, 1), -half_length + radius * np.sin(phi))]))
    for j in range(rings):                   # top hemisphere: equator -> near pole
        phi = (np.pi / 2) * j / rings
        rows.append(np.hstack([radius * np.cos(phi) * cs,
                               np.full((segments, 1), half_length + radius * np.sin(phi))]))
    row_verts = np.vstack(rows)
    p_bot = len(row_verts)
    p_top = p_bot + 1
    verts = np.vstack([row_verts, [[0, 0, -half_length - radius]], [[0, 0, half_length + radius]]])

    faces = []
    n_rows = len(rows)
    for s in range(segments):
        sn = (s + 1) % segments
        faces.append((p_bot, sn, s))
        last = (n_rows - 1) * segments
        faces.append((p_top, last + s, last + sn))
        for k in range(n_rows - 1):
            a, b = k * segments, (k + 1) * segments
            faces += [(a + s, a + sn, b + sn), (a + s, b + sn, b + s)]
    return TriangleMesh(verts, np.asarray(faces, dtype=np.int64))


# ---------------------------------------------------------------------------
# analytic signed-distance fields (sign-exact; used for CSG meshing)


def sdf_sphere(p: np.ndarray, center, radius: float) -> np.ndarray:
    return np.linalg.norm(p - np.asarray(center), axis=-1) - radius


def sdf_box(p: np.ndarray, half_extents) -> np.ndarray:
    q = np.abs(p) - np.asarray(half_extents, dtype=np.float64)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def sdf_cylinder(p: np.ndarray, radius: float, half_height: float) -> np.ndarray:
    dr = np.linalg.norm(p[..., :2], axis=-1) - radius
    dz = np.abs(p[..., 2]) - half_height
    outside = np.sqrt(np.maximum(dr, 0.0) ** 2 + np.maximum(dz, 0.0) ** 2)
    inside = np.minimum(np.maximum(dr, dz), 0.0)
    return outside + inside


def sdf_capsule(p: np.ndarray, radius: float, half_length: float) -> np.ndarray:
    z = np.clip(p[..., 2], -half_length, half_length)
    seg = p.copy()
    seg[..., 2] -= z
    return np.linalg.norm(seg, axis=-1) - radius


def mesh_csg_field(f, resolution: int, half_extent: float = 1.25) -> TriangleMesh:
    """Marching-cubes mesh of an analytic field with watertight validation.

    Retries on a deterministic resolution ladder before giving up (the fixed
    lookup table can leave cracks at ambiguous saddle faces).
    """
    for scale in _CSG_RETRY_SCALE:
        res = int(round(resolution * scale))
        grid = sample_grid(f, [-half_extent] * 3, [half_extent] * 3, res)
        mesh = marching_cubes(grid)
        if not mesh.is_empty and mesh.watertight:
            return mesh
        log.warning("csg meshing at resolution %d not watertight; retrying", res)
    raise TessellationFailureError("could not extract a watertight CSG mesh")


# ---------------------------------------------------------------------------
# corpus generation

_PARAM_RANGES = {
    "sphere": {"radius": (0.6, 1.0)},
    "box": {"hx": (0.35, 1.0), "hy": (0.35, 1.0), "hz": (0.35, 1.0)},
    "cylinder": {"radius": (0.35, 0.8), "half_height": (0.4, 1.0)},
    "capsule": {"radius": (0.3, 0.5), "half_length": (0.3, 0.8)},
    "box_sphere_union": {
        "hx": (0.4, 0.7), "hy": (0.4, 0.7), "hz": (0.4, 0.7),
        "sphere_r": (0.35, 0.6), "offset": (0.3, 0.7),
    },
    "box_minus_sphere": {
        "hx": (0.45, 0.8), "hy": (0.45, 0.8), "hz": (0.45, 0.8),
        "sphere_r": (0.3, 0.55), "dent_frac": (0.3, 0.8),
    },
}


def draw_params(family: str, seed: int) -> dict:
    if family not in _PARAM_RANGES:
        raise ValueError(f"unknown primitive family {family!r}")
    rng = rng_from(seed, 0x9A)
    return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in _PARAM_RANGES[family].items()}


def build_primitive(spec: PrimitiveSpec) -> tuple[TriangleMesh, PrimitiveSpec]:
    """Build, validate and normalize one primitive. Returns the normalized
    mesh and the spec (csg_noop set when a subtraction did not intersect)."""
    fam, p, level = spec.family, spec.params, spec.tessellation
    if fam == "sphere":
        mesh = icosphere(subdivisions=level, radius=p["radius"])
    elif fam == "box":
        mesh = box_mesh([p["hx"], p["hy"], p["hz"]])
    elif fam == "cylinder":
        mesh = cylinder_mesh(p["radius"], p["half_height"], segments=16 * level)
    elif fam == "capsule":
        mesh = capsule_mesh(p["radius"], p["half_length"], segments=16 * level, rings=4 * level)
    elif fam == "box_sphere_union":
        h = np.array([p["hx"], p["hy"], p["hz"]])
        center = np.array([0.0, 0.0, p["offset"] * p["hz"] + p["hz"]])
        # keep the blob inside the sampling volume
        scale = 1.1 / max(1.0, np.abs(center[2]) + p["sphere_r"], h.max())
        mesh = mesh_csg_field(
            lambda q: np.minimum(sdf_box(q / scale, h), sdf_sphere(q / scale, center, p["sphere_r"])) * scale,
            resolution=32 * level)
    elif fam == "box_minus_sphere":
        h = np.array([p["hx"], p["hy"], p["hz"]])
        # dent carved into the +z face; dent_frac in (0, 1) controls overlap
        cz = h[2] + p["sphere_r"] * (1.0 - 2.0 * p["dent_frac"])
        center = np.array([0.0, 0.0, cz])
        if float(sdf_box(center, h)) >= p["sphere_r"]:
            log.warning("box_minus_sphere: sphere does not intersect box; emitting plain box")
            spec.csg_noop = True
            mesh = box_mesh(h)
        else:
            scale = 1.1 / max(1.0, h.max())
            mesh = mesh_csg_field(
                lambda q: np.maximum(sdf_box(q / scale, h), -sdf_sphere(q / scale, center, p["sphere_r"])) * scale,
                resolution=32 * level)
    else:
        raise ValueError(f"unknown primitive family {fam!r}")
    if not mesh.watertight:
        raise TessellationFailureError(f"{fam} tessellation is not watertight")
    normalized, _, _ = normalize_mesh(mesh)
    return normalized, spec
