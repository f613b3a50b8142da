"""End-to-end orchestration: corpus generation, touch collection, the two
training stages, reconstruction, and the touches-vs-quality experiment.

Every stage writes a manifest carrying the configuration hash and package
version; downstream stages refuse to consume artifacts whose manifest does
not match the active configuration. All randomness derives from
experiment.master_seed, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .chartnet import (ChartModel, chart_observation, init_chart_model, load_chart_model,
                       save_chart_model, train_chart)
from .config import ExperimentConfig, config_hash
from .decoder import (DecoderModel, finetune_pivotal, infer_latent, load_decoder,
                      reconstruct_sdf, save_decoder, train_decoder)
from .errors import ConfigError, NoContactError, RetriesExhaustedError
from .isosurface import marching_cubes, sample_grid
from .mesh import TriangleMesh, load_mesh, save_mesh
from .metrics import ReconstructionReport, evaluate, read_reports_csv, write_reports_csv
from .primitives import PrimitiveSpec, build_primitive, draw_params
from .rng import subseed
from .sdfdata import generate_sdf_dataset, save_sdf_dataset
from .touch import TouchRecord, press, sample_touch_ray, save_touches

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# manifests


def write_manifest(outdir: Path, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    payload = {"config_hash": config_hash(cfg), "version": __version__}
    payload.update(extra or {})
    (outdir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def check_manifest(outdir: Path, cfg: ExperimentConfig) -> dict:
    path = Path(outdir) / "manifest.json"
    if not path.exists():
        raise ConfigError(f"{outdir}: missing manifest.json")
    manifest = json.loads(path.read_text())
    if manifest.get("config_hash") != config_hash(cfg):
        raise ConfigError(
            f"{outdir}: manifest config hash {manifest.get('config_hash')} does not match "
            f"the active configuration {config_hash(cfg)}")
    return manifest


# ---------------------------------------------------------------------------
# corpus


def gen_corpus(cfg: ExperimentConfig, outdir: str | Path) -> dict:
    """Generate the primitive corpus: one normalized watertight OBJ per shape
    plus a manifest with parameters, file hashes and the split assignment."""
    outdir = Path(outdir)
    (outdir / "shapes").mkdir(parents=True, exist_ok=True)
    c = cfg.corpus
    shapes = []
    for i in range(c.count):
        family = c.families[i % len(c.families)]
        params = draw_params(family, subseed(c.seed, 0xC0, i))
        spec = PrimitiveSpec(family, params, tessellation=c.tessellation)
        mesh, spec = build_primitive(spec)
        name = f"{i:03d}_{family}.obj"
        path = outdir / "shapes" / name
        save_mesh(mesh, path)
        if i < c.n_train:
            split = "train"
        elif i < c.n_train + c.n_val:
            split = "val"
        else:
            split = "test" if i < c.n_train + c.n_val + c.n_test else "extra"
        shapes.append({
            "id": i,
            "family": family,
            "params": params,
            "tessellation": c.tessellation,
            "csg_noop": spec.csg_noop,
            "file": f"shapes/{name}",
            "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
            "split": split,
        })
    manifest = {"seed": c.seed, "shapes": shapes}
    write_manifest(outdir, cfg, manifest)
    return manifest


def load_corpus(cfg: ExperimentConfig, outdir: str | Path) -> tuple[dict, dict[int, TriangleMesh]]:
    outdir = Path(outdir)
    manifest = check_manifest(outdir, cfg)
    meshes = {}
    for entry in manifest["shapes"]:
        meshes[entry["id"]] = load_mesh(outdir / entry["file"], require_watertight=True)
    return manifest, meshes


def shapes_in_split(manifest: dict, split: str) -> list[int]:
    return [e["id"] for e in manifest["shapes"] if e["split"] == split]


# ---------------------------------------------------------------------------
# touch collection


def touch_with_retries(mesh: TriangleMesh, shape_id: int, base_seed: int, cfg: ExperimentConfig,
                       sampler=sample_touch_ray) -> TouchRecord:
    """One touch; NoContact rays are resampled with incremented sub-seeds."""
    max_retries = cfg.touch_data.max_retries
    for attempt in range(max_retries):
        ray_seed = subseed(base_seed, attempt)
        origin, direction = sampler(mesh, ray_seed)
        try:
            return press(mesh, origin, direction, cfg.sensor, shape_id=shape_id,
                         cloud_points=cfg.touch_data.cloud_points,
                         seed=subseed(base_seed, attempt, 0xF))
        except NoContactError:
            log.warning("shape %d: no contact on attempt %d (seed %d); retrying",
                        shape_id, attempt, ray_seed)
    raise RetriesExhaustedError(f"shape {shape_id}: {max_retries} rays without contact")


def collect_touches(cfg: ExperimentConfig, meshes: dict[int, TriangleMesh], shape_ids: list[int],
                    n_per_shape: int, seed_tag: int) -> list[TouchRecord]:
    records = []
    for sid in shape_ids:
        for t in range(n_per_shape):
            base = subseed(cfg.experiment.master_seed, seed_tag, sid, t)
            records.append(touch_with_retries(meshes[sid], sid, base, cfg))
    return records


def run_touch_dataset(cfg: ExperimentConfig, corpus_dir: str | Path, outdir: str | Path,
                      split: str = "train") -> Path:
    """Collect touches_per_shape touches for every shape in a split and
    archive them."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest, meshes = load_corpus(cfg, corpus_dir)
    ids = shapes_in_split(manifest, split)
    records = collect_touches(cfg, meshes, ids, cfg.touch_data.touches_per_shape,
                              seed_tag=cfg.touch_data.seed)
    path = outdir / f"touches_{split}.ttch"
    save_touches(path, records)
    write_manifest(outdir, cfg, {"split": split, "n_records": len(records)})
    return path


# ---------------------------------------------------------------------------
# training stages


def train_chart_stage(cfg: ExperimentConfig, records: list[TouchRecord],
                      outdir: str | Path) -> tuple[ChartModel, list[float]]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    model = init_chart_model(cfg.sensor.footprint_radius, cfg.chart,
                             seed=subseed(cfg.experiment.master_seed, 0xCA))
    history = train_chart(model, records, cfg.chart_train)
    save_chart_model(model, outdir / "chart.tprm")
    _write_history(outdir / "chart_loss.csv", history)
    write_manifest(outdir, cfg, {"stage": "chart", "final_loss": history[-1]})
    return model, history


def train_sdf_stage(cfg: ExperimentConfig, corpus_dir: str | Path,
                    outdir: str | Path) -> tuple[DecoderModel, np.ndarray, list[float]]:
    """Build per-shape SDF datasets for the train split and fit the decoder."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest, meshes = load_corpus(cfg, corpus_dir)
    ids = shapes_in_split(manifest, "train")
    sd = cfg.sdf_data
    datasets = []
    for sid in ids:
        pts, s = generate_sdf_dataset(meshes[sid], sd.n_surface, sd.n_uniform, sd.sigma_near,
                                      seed=subseed(cfg.experiment.master_seed, sd.seed, 0x5D, sid))
        save_sdf_dataset(outdir / f"sdf_{sid:03d}.tsdf", pts, s)
        datasets.append((pts, s))
    model, latents, history = train_decoder(datasets, cfg.decoder, cfg.decoder_train)
    save_decoder(model, latents, outdir / "decoder.tprm", shape_ids=ids,
                 alpha=cfg.decoder_train.alpha)
    _write_history(outdir / "decoder_loss.csv", history)
    write_manifest(outdir, cfg, {"stage": "decoder", "shape_ids": ids,
                                 "final_loss": history[-1]})
    return model, latents, history


def _write_history(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(history):
            if isinstance(v, tuple):
                w.writerow([v[0], repr(float(v[1]))])
            else:
                w.writerow([i, repr(float(v))])


# ---------------------------------------------------------------------------
# reconstruction


def run_reconstruction(cfg: ExperimentConfig, gt_mesh: TriangleMesh, shape_id: int,
                       k_touches: int, seed: int, chart_model: ChartModel,
                       decoder: DecoderModel, outdir: str | Path | None = None,
                       observation=None) -> tuple[TriangleMesh, ReconstructionReport]:
    """Full reconstruction of one shape from k fresh touches.

    The decoder is used pristine (fine-tuned weights are per-reconstruction
    and never leak back). When `observation` is provided it overrides the
    chart-predicted observation (used by self-recovery checks).
    """
    if observation is None:
        records = []
        for t in range(k_touches):
            base = subseed(cfg.experiment.master_seed, 0xEC, shape_id, k_touches, seed, t)
            records.append(touch_with_retries(gt_mesh, shape_id, base, cfg))
        observation = chart_observation(records, chart_model, cfg.chart,
                                        seed=subseed(cfg.experiment.master_seed, 0x0B, shape_id,
                                                     k_touches, seed))
    z, infer_hist = infer_latent(decoder, observation.points, observation.labels, cfg.inference,
                                 seed=subseed(cfg.experiment.master_seed, 0x1A, shape_id,
                                              k_touches, seed))
    tuned, tune_hist = finetune_pivotal(decoder, z, observation.points, observation.labels,
                                        cfg.inference,
                                        seed=subseed(cfg.experiment.master_seed, 0x2B, shape_id,
                                                     k_touches, seed))
    field = reconstruct_sdf(tuned, z)
    he = cfg.mc.half_extent
    grid = sample_grid(field, [-he] * 3, [he] * 3, cfg.mc.resolution)
    mesh = marching_cubes(grid)
    report = evaluate(mesh, gt_mesh, n_points=cfg.eval.n_points,
                      seed=subseed(cfg.eval.seed, shape_id, k_touches, seed),
                      shape_id=shape_id, touches=k_touches)
    report.seed = seed
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        save_mesh(mesh, outdir / "mesh.obj")
        save_sdf_dataset(outdir / "observation.tsdf", observation.points, observation.labels)
        from . import autodiff as ad

        ad.save_tensors(outdir / "latent.tprm", {"z": z})
        _write_history(outdir / "infer_loss.csv", infer_hist)
        _write_history(outdir / "finetune_loss.csv", tune_hist)
        write_reports_csv(outdir / "report.csv", [report])
        write_manifest(outdir, cfg, {"shape_id": shape_id, "touches": k_touches, "seed": seed})
    return mesh, report


def run_trend_experiment(cfg: ExperimentConfig, corpus_dir: str | Path, models_dir: str | Path,
                         outdir: str | Path, split: str = "test") -> list[ReconstructionReport]:
    """Reconstruction-quality grid: every split shape x touch count x seed."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest, meshes = load_corpus(cfg, corpus_dir)
    models_dir = Path(models_dir)
    check_manifest(models_dir, cfg)
    chart_model = load_chart_model(models_dir / "chart.tprm")
    decoder, _, _ = load_decoder(models_dir / "decoder.tprm")
    ids = shapes_in_split(manifest, split)
    reports = []
    for sid in ids:
        for k in cfg.experiment.touch_counts:
            for seed in range(cfg.experiment.seeds_per_shape):
                _, rep = run_reconstruction(cfg, meshes[sid], sid, k, seed, chart_model, decoder)
                reports.append(rep)
                log.info("shape %d k=%d seed=%d: emd=%.4f cd=%.5f", sid, k, seed, rep.emd, rep.cd)
    write_reports_csv(outdir / "trend.csv", reports)
    summary = summarize_trend(reports)
    (outdir / "summary.txt").write_text(summary)
    write_manifest(outdir, cfg, {"split": split, "rows": len(reports)})
    return reports


def summarize_trend(reports: list[ReconstructionReport]) -> str:
    counts = sorted({r.touches for r in reports})
    lines = ["touches  mean_emd  std_emd  mean_cd  n"]
    for k in counts:
        vals = [r.emd for r in reports if r.touches == k]
        cds = [r.cd for r in reports if r.touches == k]
        lines.append(f"{k:7d}  {np.mean(vals):.6f}  {np.std(vals):.6f}  {np.mean(cds):.6f}  {len(vals)}")
    return "\n".join(lines) + "\n"


def summarize_trend_csv(path: str | Path) -> str:
    rows = read_reports_csv(path)
    reports = [ReconstructionReport(r["shape_id"], r["touches"], r["seed"], r["cd"], r["emd"],
                                    r["surface_error_pct"], 0, r["emd_exactness"] == "exact")
               for r in rows]
    return summarize_trend(reports)
