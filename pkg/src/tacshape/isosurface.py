"""Zero-level-set extraction from scalar grids via deterministic marching cubes.

Ambiguous cases are resolved by the fixed standard table (no asymptotic
decider): extraction is deterministic, at the cost that saddle-face
configurations can occasionally produce non-closed output. Vertices on
shared cell edges are merged through global edge keys, so sign-transverse
fields yield watertight meshes away from the grid boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mesh import TriangleMesh
from .mc_tables import EDGE_CORNERS, EDGE_TABLE, TRI_TABLE

log = logging.getLogger(__name__)

# corner k offset within a cell; 0-3 walk the z=0 face CCW, 4-7 the z=1 face
_CORNER_OFF = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
], dtype=np.int64)

_EDGE_NODE = np.array([np.minimum(_CORNER_OFF[a], _CORNER_OFF[b]) for a, b in EDGE_CORNERS])
_EDGE_AXIS = np.array([int(np.argmax(_CORNER_OFF[a] != _CORNER_OFF[b])) for a, b in EDGE_CORNERS])

_TRI_FLAT = np.array([e for case in TRI_TABLE for e in case], dtype=np.int64)
_TRI_OFFSET = np.zeros(257, dtype=np.int64)
_TRI_OFFSET[1:] = np.cumsum([len(case) for case in TRI_TABLE])
_TRI_COUNT = np.diff(_TRI_OFFSET)

_INTERP_CLIP = 1e-6  # keeps emitted vertices strictly inside their edge segment


@dataclass
class ScalarGrid:
    """Regular grid of field samples over an axis-aligned box.

    values[i, j, k] = f(x_i, y_j, z_k), C-order (x slowest, z fastest).
    """

    values: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        self.hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if self.values.ndim != 3:
            raise ValueError("grid values must be 3-dimensional")
        if np.any(self.hi <= self.lo):
            raise ValueError("degenerate grid bounds")

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    def axis_coords(self, axis: int) -> np.ndarray:
        return np.linspace(self.lo[axis], self.hi[axis], self.values.shape[axis])

    def spacing(self) -> np.ndarray:
        n = np.asarray(self.values.shape)
        return (self.hi - self.lo) / (n - 1)


def sample_grid(f, lo, hi, resolution, chunk: int = 1 << 16) -> ScalarGrid:
    """Evaluate a scalar field f((n, 3) -> (n,)) on a regular grid."""
    res = np.broadcast_to(np.asarray(resolution, dtype=np.int64), (3,))
    if np.any(res < 2):
        raise ValueError("resolution must be >= 2 per axis")
    lo = np.asarray(lo, dtype=np.float64).reshape(3)
    hi = np.asarray(hi, dtype=np.float64).reshape(3)
    xs = [np.linspace(lo[a], hi[a], res[a]) for a in range(3)]
    grid = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, 3)
    out = np.empty(len(grid))
    for start in range(0, len(grid), chunk):
        out[start:start + chunk] = f(grid[start:start + chunk])
    return ScalarGrid(out.reshape(tuple(res)), lo, hi)


def marching_cubes(grid: ScalarGrid, iso: float = 0.0) -> TriangleMesh:
    """Extract the iso-level set as a triangle mesh (outward winding for
    negative-inside fields). Returns an empty mesh when no cell straddles
    the iso value."""
    v = grid.values
    if not np.all(np.isfinite(v)):
        raise ValueError("grid contains non-finite values")
    nx, ny, nz = v.shape
    inside = v < iso

    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for bit, (oi, oj, ok) in enumerate(_CORNER_OFF):
        case |= inside[oi:oi + nx - 1, oj:oj + ny - 1, ok:ok + nz - 1].astype(np.int32) << bit

    active = np.nonzero((case != 0) & (case != 255))
    if len(active[0]) == 0:
        log.warning("marching cubes: empty level set at iso=%g", iso)
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    acase = case[active]
    ci, cj, ck = (a.astype(np.int64) for a in active)

    counts = _TRI_COUNT[acase]
    total = int(counts.sum())
    rep = np.repeat(np.arange(len(acase)), counts)
    within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    edge_stream = _TRI_FLAT[_TRI_OFFSET[acase][rep] + within]

    # canonical global edge key: axis * n_nodes + node linear index
    node_i = ci[rep] + _EDGE_NODE[edge_stream, 0]
    node_j = cj[rep] + _EDGE_NODE[edge_stream, 1]
    node_k = ck[rep] + _EDGE_NODE[edge_stream, 2]
    n_nodes = nx * ny * nz
    keys = _EDGE_AXIS[edge_stream] * n_nodes + (node_i * ny + node_j) * nz + node_k

    uniq, inverse = np.unique(keys, return_inverse=True)
    faces = inverse.reshape(-1, 3)

    axis = uniq // n_nodes
    lin = uniq % n_nodes
    ui = lin // (ny * nz)
    uj = (lin // nz) % ny
    uk = lin % nz
    v0 = v[ui, uj, uk]
    step = np.zeros((len(uniq), 3), dtype=np.int64)
    step[np.arange(len(uniq)), axis] = 1
    v1 = v[ui + step[:, 0], uj + step[:, 1], uk + step[:, 2]]
    denom = v1 - v0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom != 0.0, (iso - v0) / denom, 0.5)
    t = np.clip(t, _INTERP_CLIP, 1.0 - _INTERP_CLIP)

    h = grid.spacing()
    base = grid.lo + np.stack([ui, uj, uk], axis=1) * h
    verts = base + (t[:, None] * h) * step

    # table order is clockwise seen from outside for value<iso inside; flip
    faces = faces[:, [0, 2, 1]]
    nondegen = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    return TriangleMesh(verts, faces[nondegen])
