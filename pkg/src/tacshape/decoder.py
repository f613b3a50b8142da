"""Latent-conditioned implicit signed-distance decoder.

An MLP maps concat(positional encoding of x, latent z) to a scalar distance,
clamped to [-delta, delta] when clamping is enabled. Training jointly
optimizes the network and one latent per shape on a clamped-L1 data term
plus a weighted squared-norm latent penalty; reconstruction re-optimizes a
fresh latent on a partial observation with the network frozen, optionally
followed by a brief network fine-tune with the latent frozen.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import EmptyDatasetError, EmptyObservationError
from .rng import rng_from


@dataclass(frozen=True)
class PosEnc:
    """Per-axis multi-frequency sinusoid features: sin/cos(2^k pi v), k < L."""

    L: int = 6
    include_input: bool = True

    @property
    def dim(self) -> int:
        return 3 * (2 * self.L + (1 if self.include_input else 0))

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        parts = [x] if self.include_input else []
        for k in range(self.L):
            arg = (2.0 ** k) * np.pi * x
            parts.append(np.sin(arg))
            parts.append(np.cos(arg))
        return np.concatenate(parts, axis=1)


@dataclass
class DecoderConfig:
    latent_dim: int = 32
    hidden: int = 128
    n_layers: int = 4
    skip_layer: int = 2          # hidden layer whose input gets the full net input again
    penc_l: int = 6
    include_input: bool = True
    clamp_delta: float = 0.1
    clamp_enabled: bool = True

    @property
    def penc(self) -> PosEnc:
        return PosEnc(self.penc_l, self.include_input)

    @property
    def in_dim(self) -> int:
        return self.penc.dim + self.latent_dim


@dataclass
class DecoderModel:
    cfg: DecoderConfig
    params: dict[str, ad.Tensor] = field(default_factory=dict)

    def param_list(self) -> list[ad.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def clone(self) -> "DecoderModel":
        params = {k: ad.Tensor(t.data.copy(), requires_grad=True, name=k)
                  for k, t in self.params.items()}
        return DecoderModel(copy.deepcopy(self.cfg), params)


def init_decoder(cfg: DecoderConfig, seed: int, dtype=np.float32) -> DecoderModel:
    rng = rng_from(seed, 0xDE)
    params: dict[str, ad.Tensor] = {}
    widths_in = []
    for i in range(cfg.n_layers):
        w_in = cfg.in_dim if i == 0 else cfg.hidden
        if i == cfg.skip_layer and i > 0:
            w_in += cfg.in_dim
        widths_in.append(w_in)
    for i, w_in in enumerate(widths_in):
        params[f"h{i}.w"] = ad.Tensor(ad.he_normal(rng, w_in, (w_in, cfg.hidden), dtype),
                                      requires_grad=True, name=f"h{i}.w")
        params[f"h{i}.b"] = ad.Tensor(np.zeros(cfg.hidden, dtype), requires_grad=True, name=f"h{i}.b")
    # small output init keeps early predictions inside the clamp band so the
    # clamped-L1 gradient does not starve
    params["out.w"] = ad.Tensor(ad.he_normal(rng, cfg.hidden, (cfg.hidden, 1), dtype) * 0.01,
                                requires_grad=True, name="out.w")
    params["out.b"] = ad.Tensor(np.zeros(1, dtype), requires_grad=True, name="out.b")
    return DecoderModel(cfg, params)


def decoder_forward(model: DecoderModel, enc: np.ndarray, z: ad.Tensor) -> ad.Tensor:
    """Graph forward: enc (B, E) numpy + z (B, D) tensor -> (B, 1) prediction
    (clamped when the config enables clamping)."""
    cfg = model.cfg
    p = model.params
    dtype = p["out.w"].dtype
    x_in = ad.concat([ad.constant(enc, dtype=dtype), z], axis=1)
    h = x_in
    for i in range(cfg.n_layers):
        if i == cfg.skip_layer and i > 0:
            h = ad.concat([h, x_in], axis=1)
        h = ad.relu(ad.linear(h, p[f"h{i}.w"], p[f"h{i}.b"]))
    out = ad.linear(h, p["out.w"], p["out.b"])
    if cfg.clamp_enabled:
        out = ad.clamp(out, -cfg.clamp_delta, cfg.clamp_delta)
    return out


def decoder_forward_numpy(model: DecoderModel, enc: np.ndarray, z_row: np.ndarray) -> np.ndarray:
    """Inference-only forward: enc (B, E), single latent z (D,) -> (B,)."""
    cfg = model.cfg
    p = {k: t.data for k, t in model.params.items()}
    dtype = p["out.w"].dtype
    zb = np.broadcast_to(z_row.astype(dtype), (len(enc), len(z_row)))
    x_in = np.concatenate([enc.astype(dtype), zb], axis=1)
    h = x_in
    for i in range(cfg.n_layers):
        if i == cfg.skip_layer and i > 0:
            h = np.concatenate([h, x_in], axis=1)
        h = np.maximum(h @ p[f"h{i}.w"] + p[f"h{i}.b"], 0.0)
    out = (h @ p["out.w"] + p["out.b"]).reshape(-1)
    if cfg.clamp_enabled:
        out = np.clip(out, -cfg.clamp_delta, cfg.clamp_delta)
    return out.astype(np.float64)


def decode(model: DecoderModel, z: np.ndarray, points: np.ndarray) -> np.ndarray | float:
    """Predicted signed distance at point(s) for one latent."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    enc = model.cfg.penc.encode(np.atleast_2d(pts))
    out = decoder_forward_numpy(model, enc, np.asarray(z, dtype=np.float64))
    return float(out[0]) if single else out


def reconstruct_sdf(model: DecoderModel, z: np.ndarray, chunk: int = 1 << 15):
    """Scalar field closure f((M, 3)) -> (M,) for grid evaluation."""
    z = np.asarray(z, dtype=np.float64)

    def field(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.empty(len(pts))
        for start in range(0, len(pts), chunk):
            enc = model.cfg.penc.encode(pts[start:start + chunk])
            out[start:start + chunk] = decoder_forward_numpy(model, enc, z)
        return out

    return field


# ---------------------------------------------------------------------------
# training (joint network + latent table)


@dataclass
class SdfTrainConfig:
    alpha: float = 1e-4          # latent norm penalty weight
    lr_theta: float = 5e-4
    lr_z: float = 1e-3
    epochs: int = 400
    batch_size: int = 1024
    seed: int = 0
    decay_every: int = 0         # epochs between lr halvings (0 = constant)
    decay_factor: float = 0.5


def _clamp_targets(s: np.ndarray, cfg: DecoderConfig) -> np.ndarray:
    if cfg.clamp_enabled:
        return np.clip(s, -cfg.clamp_delta, cfg.clamp_delta)
    return np.asarray(s, dtype=np.float64)


def batch_loss(model: DecoderModel, latents: ad.Tensor, enc: np.ndarray,
               targets: np.ndarray, shape_idx: np.ndarray, alpha: float) -> ad.Tensor:
    """Clamped-L1 data term plus alpha * mean ||z of sample||^2 over a batch."""
    zb = ad.take_rows(latents, shape_idx)
    pred = decoder_forward(model, enc, zb)
    tgt = ad.constant(_clamp_targets(targets, model.cfg).reshape(-1, 1), dtype=pred.dtype)
    data = ad.l1_loss(pred, tgt)
    if alpha == 0.0:
        return data
    return ad.add(data, ad.scale(ad.sumsq(zb), alpha / len(enc)))


def dataset_loss(model: DecoderModel, latents: np.ndarray, points: np.ndarray,
                 targets: np.ndarray, shape_idx: np.ndarray, alpha: float) -> tuple[float, float, float]:
    """Full-dataset objective: (total, data term, alpha * sum_i ||z_i||^2).

    The regularizer here is the exact per-shape sum; mini-batch steps use the
    per-sample mean estimator instead.
    """
    enc = model.cfg.penc.encode(points)
    data = 0.0
    n = len(points)
    for start in range(0, n, 8192):
        sl = slice(start, start + 8192)
        pred = _forward_rows(model, enc[sl], latents[shape_idx[sl]])
        data += np.abs(pred - _clamp_targets(targets[sl], model.cfg)).sum()
    data /= n
    reg = alpha * float((latents.astype(np.float64) ** 2).sum())
    return data + reg, float(data), reg


def _forward_rows(model: DecoderModel, enc: np.ndarray, zrows: np.ndarray) -> np.ndarray:
    cfg = model.cfg
    p = {k: t.data for k, t in model.params.items()}
    dtype = p["out.w"].dtype
    x_in = np.concatenate([enc.astype(dtype), zrows.astype(dtype)], axis=1)
    h = x_in
    for i in range(cfg.n_layers):
        if i == cfg.skip_layer and i > 0:
            h = np.concatenate([h, x_in], axis=1)
        h = np.maximum(h @ p[f"h{i}.w"] + p[f"h{i}.b"], 0.0)
    out = (h @ p["out.w"] + p["out.b"]).reshape(-1)
    if cfg.clamp_enabled:
        out = np.clip(out, -cfg.clamp_delta, cfg.clamp_delta)
    return out.astype(np.float64)


def train_decoder(datasets: list[tuple[np.ndarray, np.ndarray]], cfg: DecoderConfig,
                  tcfg: SdfTrainConfig) -> tuple[DecoderModel, np.ndarray, list[float]]:
    """Jointly optimize decoder weights and one latent per shape.

    datasets: per-shape (points (n, 3), signed distances (n,)).
    Returns (model, latent table (S, D) float32, per-epoch mean loss).
    """
    if not datasets or any(len(p) == 0 for p, _ in datasets):
        raise EmptyDatasetError("every shape needs a non-empty SDF dataset")
    model = init_decoder(cfg, tcfg.seed)
    rng = rng_from(tcfg.seed, 0xD7)
    n_shapes = len(datasets)
    latents = ad.Tensor(rng.normal(scale=0.01, size=(n_shapes, cfg.latent_dim)),
                        requires_grad=True, name="latents")

    points = np.concatenate([p for p, _ in datasets])
    targets = np.concatenate([s for _, s in datasets])
    shape_idx = np.concatenate([np.full(len(p), i, dtype=np.int64) for i, (p, _) in enumerate(datasets)])
    enc_all = cfg.penc.encode(points).astype(np.float32)

    opt = ad.Adam([(model.param_list(), tcfg.lr_theta), ([latents], tcfg.lr_z)])
    history: list[float] = []
    n = len(points)
    for epoch in range(tcfg.epochs):
        if tcfg.decay_every and epoch and epoch % tcfg.decay_every == 0:
            opt.set_lr(tcfg.decay_factor)
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, tcfg.batch_size):
            sel = perm[start:start + tcfg.batch_size]
            loss = batch_loss(model, latents, enc_all[sel], targets[sel], shape_idx[sel], tcfg.alpha)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    return model, latents.data.copy(), history


# ---------------------------------------------------------------------------
# inference: latent optimization on an observation, then pivotal fine-tune


@dataclass
class InferenceConfig:
    steps: int = 800
    lr_z: float = 5e-3
    alpha: float = 1e-4
    batch_size: int = 1024
    eval_every: int = 20
    finetune_steps: int = 200
    lr_theta: float = 1e-5
    init_std: float = 0.01


def _sort_observation(points: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # lexicographic sort makes mini-batch draws invariant to input ordering
    order = np.lexsort((labels, points[:, 2], points[:, 1], points[:, 0]))
    return points[order], labels[order]


def observation_loss(model: DecoderModel, z: np.ndarray, enc: np.ndarray,
                     targets_clamped: np.ndarray, alpha: float) -> float:
    pred = decoder_forward_numpy(model, enc, z)
    data = float(np.abs(pred - targets_clamped).mean())
    return data + alpha * float((z.astype(np.float64) ** 2).sum())


def infer_latent(model: DecoderModel, obs_points: np.ndarray, obs_labels: np.ndarray,
                 icfg: InferenceConfig, seed: int = 0) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Optimize a fresh latent on the observation with the network frozen.

    Returns (best latent by full-observation loss, [(step, loss)] history).
    """
    if len(obs_points) == 0:
        raise EmptyObservationError("empty observation")
    pts, labels = _sort_observation(np.asarray(obs_points, dtype=np.float64),
                                    np.asarray(obs_labels, dtype=np.float64))
    enc = model.cfg.penc.encode(pts).astype(np.float32)
    tgt = _clamp_targets(labels, model.cfg)
    rng = rng_from(seed, 0x1F)
    z = ad.Tensor(rng.normal(scale=icfg.init_std, size=(1, model.cfg.latent_dim)),
                  requires_grad=True, name="z")
    opt = ad.Adam([([z], icfg.lr_z)])
    n = len(pts)
    best_z = z.data.copy()
    best_loss = observation_loss(model, best_z[0], enc, tgt, icfg.alpha)
    history = [(0, best_loss)]
    for step in range(1, icfg.steps + 1):
        sel = rng.choice(n, size=min(icfg.batch_size, n), replace=False) if n > icfg.batch_size \
            else np.arange(n)
        zb = ad.take_rows(z, np.zeros(len(sel), dtype=np.int64))
        pred = decoder_forward(model, enc[sel], zb)
        data = ad.l1_loss(pred, ad.constant(tgt[sel].reshape(-1, 1), dtype=pred.dtype))
        loss = ad.add(data, ad.scale(ad.sumsq(z), icfg.alpha))
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
        if step % icfg.eval_every == 0 or step == icfg.steps:
            full = observation_loss(model, z.data[0], enc, tgt, icfg.alpha)
            history.append((step, full))
            if full < best_loss:
                best_loss = full
                best_z = z.data.copy()
    return best_z[0].astype(np.float32), history


def finetune_pivotal(model: DecoderModel, z: np.ndarray, obs_points: np.ndarray,
                     obs_labels: np.ndarray, icfg: InferenceConfig,
                     seed: int = 0) -> tuple[DecoderModel, list[tuple[int, float]]]:
    """Brief network fine-tune on the observation with the latent frozen.

    Operates on a copy (the input model stays pristine); the returned model is
    the best full-observation-loss iterate, so the observation loss never
    increases relative to the input model.
    """
    if len(obs_points) == 0:
        raise EmptyObservationError("empty observation")
    tuned = model.clone()
    pts, labels = _sort_observation(np.asarray(obs_points, dtype=np.float64),
                                    np.asarray(obs_labels, dtype=np.float64))
    enc = tuned.cfg.penc.encode(pts).astype(np.float32)
    tgt = _clamp_targets(labels, tuned.cfg)
    z = np.asarray(z, dtype=np.float64)
    if icfg.finetune_steps <= 0:
        return tuned, [(0, observation_loss(tuned, z, enc, tgt, icfg.alpha))]
    rng = rng_from(seed, 0x2F)
    opt = ad.Adam([(tuned.param_list(), icfg.lr_theta)])
    n = len(pts)
    best = {k: t.data.copy() for k, t in tuned.params.items()}
    best_loss = observation_loss(tuned, z, enc, tgt, icfg.alpha)
    history = [(0, best_loss)]
    zt = ad.constant(z.reshape(1, -1), dtype=np.float32)
    for step in range(1, icfg.finetune_steps + 1):
        sel = rng.choice(n, size=min(icfg.batch_size, n), replace=False) if n > icfg.batch_size \
            else np.arange(n)
        zb = ad.take_rows(zt, np.zeros(len(sel), dtype=np.int64))
        pred = decoder_forward(tuned, enc[sel], zb)
        loss = ad.l1_loss(pred, ad.constant(tgt[sel].reshape(-1, 1), dtype=pred.dtype))
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
        if step % icfg.eval_every == 0 or step == icfg.finetune_steps:
            full = observation_loss(tuned, z, enc, tgt, icfg.alpha)
            history.append((step, full))
            if full < best_loss:
                best_loss = full
                best = {k: t.data.copy() for k, t in tuned.params.items()}
    for k, t in tuned.params.items():
        t.data = best[k]
    return tuned, history


# ---------------------------------------------------------------------------
# checkpointing


def save_decoder(model: DecoderModel, latents: np.ndarray, path: str | Path,
                 shape_ids: list[int] | None = None,
                 normalization: dict[int, dict] | None = None,
                 alpha: float | None = None) -> None:
    path = Path(path)
    tensors = {k: t.data for k, t in model.params.items()}
    tensors["latents"] = np.asarray(latents, dtype=np.float32)
    ad.save_tensors(path, tensors)
    cfg = model.cfg
    side = {
        "latent_dim": cfg.latent_dim,
        "hidden": cfg.hidden,
        "n_layers": cfg.n_layers,
        "skip_layer": cfg.skip_layer,
        "penc_l": cfg.penc_l,
        "include_input": cfg.include_input,
        "clamp_delta": cfg.clamp_delta,
        "clamp_enabled": cfg.clamp_enabled,
        "alpha": alpha,
        "shape_ids": shape_ids if shape_ids is not None else list(range(len(latents))),
        "normalization": {str(k): v for k, v in (normalization or {}).items()},
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def load_decoder(path: str | Path) -> tuple[DecoderModel, np.ndarray, dict]:
    path = Path(path)
    side = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    cfg = DecoderConfig(
        latent_dim=side["latent_dim"], hidden=side["hidden"], n_layers=side["n_layers"],
        skip_layer=side["skip_layer"], penc_l=side["penc_l"],
        include_input=side["include_input"], clamp_delta=side["clamp_delta"],
        clamp_enabled=side["clamp_enabled"],
    )
    tensors = ad.load_tensors(path)
    latents = tensors.pop("latents")
    params = {k: ad.Tensor(v, requires_grad=True, name=k) for k, v in tensors.items()}
    return DecoderModel(cfg, params), latents, side
