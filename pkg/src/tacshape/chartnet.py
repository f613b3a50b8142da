"""Local contact-chart prediction from tactile depth images.

A dense encoder maps a downsampled depth image to per-vertex displacements of
a fixed 25-vertex planar base chart (5x5 grid spanning the sensor footprint
at z=0 in the sensor frame). Training minimizes a symmetric squared chamfer
distance between clouds sampled on the predicted chart (moved to the world
frame by each record's pose) and the recorded ground-truth contact clouds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .errors import EmptyDatasetError, MixedShapesError, ShapeMismatchError
from .mesh import Pose, TriangleMesh
from .rng import rng_from, subseed
from .touch import TouchRecord

GRID_N = 5          # chart is a GRID_N x GRID_N vertex grid
N_VERTS = GRID_N * GRID_N
N_FACES = 2 * (GRID_N - 1) ** 2


def base_chart(footprint_radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Planar base chart: (25, 3) vertices at z=0 and (32, 3) fixed faces."""
    axis = np.linspace(-footprint_radius, footprint_radius, GRID_N)
    xx, yy = np.meshgrid(axis, axis, indexing="xy")
    verts = np.stack([xx.ravel(), yy.ravel(), np.zeros(N_VERTS)], axis=1)
    faces = []
    for r in range(GRID_N - 1):
        for c in range(GRID_N - 1):
            a = r * GRID_N + c
            b = a + 1
            d = a + GRID_N
            e = d + 1
            faces += [(a, b, e), (a, e, d)]
    return verts, np.asarray(faces, dtype=np.int64)


@dataclass
class ChartConfig:
    input_res: int = 32
    hidden1: int = 256
    hidden2: int = 256
    n_surface: int = 128       # surface samples per touch
    m_extra: int = 64          # of those, offset pairs added at +-eps
    eps: float = 0.01
    tanh_scale_frac: float = 0.5  # displacement bound as a fraction of footprint_radius
    input_gain: float = 255.0  # stored images live in [0,1]; present 0-255 units


@dataclass
class ChartModel:
    footprint_radius: float
    cfg: ChartConfig
    params: dict[str, ad.Tensor] = field(default_factory=dict)

    @property
    def tanh_scale(self) -> float:
        return self.cfg.tanh_scale_frac * self.footprint_radius

    def param_list(self) -> list[ad.Tensor]:
        return [self.params[k] for k in sorted(self.params)]


def init_chart_model(footprint_radius: float, cfg: ChartConfig, seed: int,
                     dtype=np.float32) -> ChartModel:
    """Displacement head starts at zero so the untrained model emits the base
    chart exactly."""
    rng = rng_from(seed, 0xCA)
    d_in = cfg.input_res ** 2
    dims = [d_in, cfg.hidden1, cfg.hidden2, 3 * N_VERTS]
    params: dict[str, ad.Tensor] = {}
    for i in range(3):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = ad.he_normal(rng, fan_in, (fan_in, fan_out), dtype) if i < 2 else np.zeros((fan_in, fan_out), dtype)
        params[f"fc{i}.w"] = ad.Tensor(w, requires_grad=True, name=f"fc{i}.w")
        params[f"fc{i}.b"] = ad.Tensor(np.zeros(fan_out, dtype), requires_grad=True, name=f"fc{i}.b")
    return ChartModel(footprint_radius, cfg, params)


def downsample_bilinear(image: np.ndarray, out_res: int) -> np.ndarray:
    """Deterministic bilinear resample (align-centers convention)."""
    s = image.shape[0]
    if s == out_res:
        return np.asarray(image, dtype=np.float64)
    coord = (np.arange(out_res) + 0.5) * (s / out_res) - 0.5
    i0 = np.clip(np.floor(coord).astype(np.int64), 0, s - 1)
    i1 = np.clip(i0 + 1, 0, s - 1)
    frac = np.clip(coord - i0, 0.0, 1.0)
    img = np.asarray(image, dtype=np.float64)
    rows = img[i0] * (1 - frac)[:, None] + img[i1] * frac[:, None]
    return rows[:, i0] * (1 - frac)[None, :] + rows[:, i1] * frac[None, :]


def _encode_images(model: ChartModel, images: np.ndarray) -> np.ndarray:
    """(B, S, S) depth stack -> (B, input_res^2) flat network inputs."""
    out = np.stack([downsample_bilinear(im, model.cfg.input_res) for im in images])
    return (out.reshape(len(images), -1) * model.cfg.input_gain)


def _forward_disp(model: ChartModel, flat: np.ndarray) -> ad.Tensor:
    """(B, d_in) -> (B, 25, 3) displacement tensor."""
    p = model.params
    dtype = p["fc0.w"].dtype
    x = ad.constant(flat, dtype=dtype)
    h = ad.relu(ad.linear(x, p["fc0.w"], p["fc0.b"]))
    h = ad.relu(ad.linear(h, p["fc1.w"], p["fc1.b"]))
    out = ad.tanh(ad.linear(h, p["fc2.w"], p["fc2.b"]))
    return ad.reshape(ad.scale(out, model.tanh_scale), (len(flat), N_VERTS, 3))


def predict_chart(model: ChartModel, image: np.ndarray) -> TriangleMesh:
    """Deformed chart (sensor frame) for one depth image."""
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ShapeMismatchError(f"expected a square depth image, got {image.shape}")
    disp = _forward_disp(model, _encode_images(model, image[None])).data[0]
    base_v, faces = base_chart(model.footprint_radius)
    return TriangleMesh(base_v + disp.astype(np.float64), faces)


def chart_to_world(chart: TriangleMesh, pose: Pose) -> TriangleMesh:
    return TriangleMesh(pose.apply(chart.vertices), chart.faces.copy())


@dataclass
class AugmentedCloud:
    points: np.ndarray   # (N, 3)
    labels: np.ndarray   # (N,) values in {-eps, 0, +eps}


def sample_chart_cloud(chart_mesh: TriangleMesh, n: int, m_extra: int, eps: float,
                       seed: int, sensor_axis: np.ndarray) -> AugmentedCloud:
    """n area-weighted surface samples labeled 0; the first m_extra of them
    spawn two offset points at +-eps along the surface normal oriented toward
    the sensor (+eps on the sensor side)."""
    if n < 1 or m_extra < 0 or eps <= 0:
        raise ValueError("need n >= 1, m_extra >= 0, eps > 0")
    if m_extra > n:
        raise ValueError("m_extra cannot exceed n")
    from .mesh import sample_surface

    pts, normals = sample_surface(chart_mesh, n, seed)
    axis = np.asarray(sensor_axis, dtype=np.float64)
    flip = normals @ axis < 0.0
    normals = np.where(flip[:, None], -normals, normals)
    parts_p = [pts]
    parts_l = [np.zeros(n)]
    if m_extra:
        base = pts[:m_extra]
        nrm = normals[:m_extra]
        parts_p += [base + eps * nrm, base - eps * nrm]
        parts_l += [np.full(m_extra, eps), np.full(m_extra, -eps)]
    return AugmentedCloud(np.concatenate(parts_p), np.concatenate(parts_l))


# ---------------------------------------------------------------------------
# training


@dataclass
class ChartTrainConfig:
    epochs: int = 60
    batch_size: int = 16
    lr: float = 3e-4
    seed: int = 0
    n_sample: int = 128        # chart samples per record inside the loss


def _chart_world_graph(model: ChartModel, flat: np.ndarray, rot: np.ndarray,
                       trans: np.ndarray) -> ad.Tensor:
    """(B, 25, 3) world-frame chart vertices as a graph node."""
    disp = _forward_disp(model, flat)
    base_v, _ = base_chart(model.footprint_radius)
    dtype = disp.dtype
    verts = ad.add(disp, ad.constant(np.broadcast_to(base_v, disp.shape).copy(), dtype=dtype))
    rot_t = ad.constant(rot.transpose(0, 2, 1), dtype=dtype)      # (B, 3, 3)
    world = ad.matmul(verts, rot_t)
    return ad.add(world, ad.constant(trans[:, None, :], dtype=dtype))


def _chamfer_graph(pred: ad.Tensor, gt: np.ndarray, weights: np.ndarray) -> ad.Tensor:
    """Symmetric squared chamfer between sampled chart points and GT clouds.

    pred: (B, 25, 3) vertex tensor; gt: (B, M, 3); weights: (B, K, 25)
    barycentric sampling matrices (detached, resampled per step). Nearest
    neighbors are recomputed from current values and treated as constant.
    """
    b, k = weights.shape[0], weights.shape[1]
    m = gt.shape[1]
    points = ad.matmul(ad.constant(weights, dtype=pred.dtype), pred)   # (B, K, 3)
    pv = points.data.astype(np.float64)

    idx_a = np.empty((b, k), dtype=np.int64)
    idx_b = np.empty((b, m), dtype=np.int64)
    for i in range(b):
        d2 = ((pv[i][:, None, :] - gt[i][None, :, :]) ** 2).sum(-1)
        idx_a[i] = d2.argmin(axis=1)
        idx_b[i] = d2.argmin(axis=0)

    gt_sel = np.take_along_axis(gt, idx_a[:, :, None], axis=1)         # (B, K, 3)
    diff_a = ad.sub(points, ad.constant(gt_sel, dtype=pred.dtype))
    loss_a = ad.scale(ad.sumsq(diff_a), 1.0 / (b * k))

    flat = ad.reshape(points, (b * k, 3))
    sel = ad.take_rows(flat, (np.arange(b)[:, None] * k + idx_b).reshape(-1))
    diff_b = ad.sub(sel, ad.constant(gt.reshape(b * m, 3), dtype=pred.dtype))
    loss_b = ad.scale(ad.sumsq(diff_b), 1.0 / (b * m))
    return ad.add(loss_a, loss_b)


def _sample_weights(verts: np.ndarray, faces: np.ndarray, k: int,
                    rng: np.random.Generator) -> np.ndarray:
    """(B, K, 25) barycentric matrices, triangles drawn by current face area."""
    b = verts.shape[0]
    out = np.zeros((b, k, N_VERTS))
    for i in range(b):
        c = verts[i][faces]
        areas = 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
        total = areas.sum()
        prob = areas / total if total > 0 else np.full(len(faces), 1.0 / len(faces))
        tri = rng.choice(len(faces), size=k, p=prob)
        u = rng.random(k)
        v = rng.random(k)
        flip = u + v > 1.0
        u[flip] = 1.0 - u[flip]
        v[flip] = 1.0 - v[flip]
        rows = np.arange(k)
        out[i, rows, faces[tri, 0]] = 1.0 - u - v
        out[i, rows, faces[tri, 1]] = u
        out[i, rows, faces[tri, 2]] = v
    return out


def chamfer_to_records(model: ChartModel, records: list[TouchRecord], seed: int,
                       n_sample: int = 128) -> float:
    """Mean chamfer of predicted chart clouds against record ground truth
    (numpy only; used for validation and baselines)."""
    _, faces = base_chart(model.footprint_radius)
    total = 0.0
    for i, rec in enumerate(records):
        chart = predict_chart(model, rec.image.depth)
        world = chart_to_world(chart, rec.pose)
        from .mesh import sample_surface

        pts, _ = sample_surface(world, n_sample, subseed(seed, i))
        gt = rec.cloud_points
        d2 = ((pts[:, None, :] - gt[None, :, :]) ** 2).sum(-1)
        total += d2.min(axis=1).mean() + d2.min(axis=0).mean()
    return total / len(records)


def train_chart(model: ChartModel, records: list[TouchRecord], cfg: ChartTrainConfig) -> list[float]:
    """Train in place; returns per-epoch mean training loss."""
    if not records:
        raise EmptyDatasetError("no touch records to train on")
    _, faces = base_chart(model.footprint_radius)
    flats = _encode_images(model, np.stack([r.image.depth for r in records]))
    rots = np.stack([r.pose.rotation for r in records])
    trans = np.stack([r.pose.translation for r in records])
    gts = np.stack([r.cloud_points for r in records]).astype(np.float64)

    opt = ad.Adam([(model.param_list(), cfg.lr)])
    rng = rng_from(cfg.seed, 0xC7)
    history: list[float] = []
    n = len(records)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            sel = perm[start:start + cfg.batch_size]
            world = _chart_world_graph(model, flats[sel], rots[sel], trans[sel])
            weights = _sample_weights(world.data.astype(np.float64), faces, cfg.n_sample, rng)
            loss = _chamfer_graph(world, gts[sel], weights)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    return history


def chart_observation(records: list[TouchRecord], model: ChartModel, cfg: ChartConfig,
                      seed: int = 0) -> AugmentedCloud:
    """Union of predicted, world-frame augmented clouds over same-shape touches."""
    if not records:
        raise EmptyDatasetError("no touch records")
    ids = {r.shape_id for r in records}
    if len(ids) != 1:
        raise MixedShapesError(f"records span shapes {sorted(ids)}")
    parts_p, parts_l = [], []
    for i, rec in enumerate(records):
        chart = predict_chart(model, rec.image.depth)
        world = chart_to_world(chart, rec.pose)
        cloud = sample_chart_cloud(world, cfg.n_surface, cfg.m_extra, cfg.eps,
                                   subseed(seed, i), rec.pose.rotation[:, 2])
        parts_p.append(cloud.points)
        parts_l.append(cloud.labels)
    return AugmentedCloud(np.concatenate(parts_p), np.concatenate(parts_l))


# ---------------------------------------------------------------------------
# checkpointing: "TPRM" tensors plus a JSON sidecar


def save_chart_model(model: ChartModel, path: str | Path) -> None:
    path = Path(path)
    ad.save_tensors(path, {k: t.data for k, t in model.params.items()})
    side = {
        "footprint_radius": model.footprint_radius,
        "input_res": model.cfg.input_res,
        "hidden1": model.cfg.hidden1,
        "hidden2": model.cfg.hidden2,
        "n_surface": model.cfg.n_surface,
        "m_extra": model.cfg.m_extra,
        "eps": model.cfg.eps,
        "tanh_scale_frac": model.cfg.tanh_scale_frac,
        "input_gain": model.cfg.input_gain,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def load_chart_model(path: str | Path) -> ChartModel:
    path = Path(path)
    side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    cfg = ChartConfig(
        input_res=side["input_res"], hidden1=side["hidden1"], hidden2=side["hidden2"],
        n_surface=side["n_surface"], m_extra=side["m_extra"], eps=side["eps"],
        tanh_scale_frac=side["tanh_scale_frac"], input_gain=side["input_gain"],
    )
    tensors = ad.load_tensors(path)
    params = {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in tensors.items()}
    return ChartModel(side["footprint_radius"], cfg, params)
