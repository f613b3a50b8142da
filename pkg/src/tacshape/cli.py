"""Command-line interface for the full pipeline.

Subcommands: gen-corpus, gen-touches, train-chart, train-sdf, reconstruct,
trend, eval, mesh-sdf. All stages are driven by one key=value config file
(defaults apply when omitted) and a master seed, making every output
byte-reproducible.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import config_hash, dump_config, load_config
from .errors import TacshapeError

log = logging.getLogger("tacshape")


def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="key=value config file (defaults if omitted)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tacshape",
                                     description="simulated tactile sensing and implicit shape completion")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    parser.add_argument("--dump-config", action="store_true",
                        help="print the fully resolved configuration and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-corpus", help="generate the primitive shape corpus")
    _add_config_arg(p)
    p.add_argument("--out", type=Path, required=True, help="corpus output directory")

    p = sub.add_parser("gen-touches", help="collect a touch-record archive for a corpus split")
    _add_config_arg(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="train", choices=["train", "val", "test"])

    p = sub.add_parser("train-chart", help="train the tactile-image-to-chart predictor")
    _add_config_arg(p)
    p.add_argument("--touches", type=Path, required=True, help="touch archive (.ttch)")
    p.add_argument("--out", type=Path, required=True, help="models output directory")

    p = sub.add_parser("train-sdf", help="train the latent-conditioned distance decoder")
    _add_config_arg(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="models output directory")

    p = sub.add_parser("reconstruct", help="reconstruct one shape from fresh touches")
    _add_config_arg(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--shape-id", type=int, required=True)
    p.add_argument("--touches-k", type=int, default=20, help="number of touches")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("trend", help="reconstruction quality across touch counts")
    _add_config_arg(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])

    p = sub.add_parser("eval", help="evaluate a predicted mesh against ground truth")
    _add_config_arg(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="optional report CSV path")

    p = sub.add_parser("mesh-sdf", help="dump a signed-distance dataset for a mesh (debug)")
    _add_config_arg(p)
    p.add_argument("--mesh", type=Path, required=True, help="watertight OBJ")
    p.add_argument("--out", type=Path, required=True, help="output .tsdf")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(getattr(args, "config", None))
        if args.dump_config:
            print(dump_config(cfg), end="")
            return 0
        if args.command is None:
            parser.print_help()
            return 2
        return _dispatch(args, cfg)
    except TacshapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args, cfg) -> int:
    from . import pipeline

    if args.command == "gen-corpus":
        manifest = pipeline.gen_corpus(cfg, args.out)
        print(f"wrote {len(manifest['shapes'])} shapes to {args.out} (config {config_hash(cfg)})")
        return 0

    if args.command == "gen-touches":
        path = pipeline.run_touch_dataset(cfg, args.corpus, args.out, split=args.split)
        print(f"wrote {path}")
        return 0

    if args.command == "train-chart":
        from .touch import load_touches

        records = load_touches(args.touches)
        args.out.mkdir(parents=True, exist_ok=True)
        _, history = pipeline.train_chart_stage(cfg, records, args.out)
        print(f"chart trained: loss {history[0]:.6f} -> {history[-1]:.6f}; saved to {args.out}")
        return 0

    if args.command == "train-sdf":
        _, _, history = pipeline.train_sdf_stage(cfg, args.corpus, args.out)
        print(f"decoder trained: loss {history[0]:.6f} -> {history[-1]:.6f}; saved to {args.out}")
        return 0

    if args.command == "reconstruct":
        from .chartnet import load_chart_model
        from .decoder import load_decoder

        manifest, meshes = pipeline.load_corpus(cfg, args.corpus)
        pipeline.check_manifest(args.models, cfg)
        chart_model = load_chart_model(args.models / "chart.tprm")
        decoder, _, _ = load_decoder(args.models / "decoder.tprm")
        if args.shape_id not in meshes:
            print(f"error: shape {args.shape_id} not in corpus", file=sys.stderr)
            return 1
        mesh, report = pipeline.run_reconstruction(
            cfg, meshes[args.shape_id], args.shape_id, args.touches_k, args.seed,
            chart_model, decoder, outdir=args.out)
        print(f"reconstructed shape {args.shape_id} ({len(mesh.faces)} faces): "
              f"cd={report.cd:.6f} emd={report.emd:.6f} surf={report.surface_error_pct:.1f}%")
        return 0

    if args.command == "trend":
        reports = pipeline.run_trend_experiment(cfg, args.corpus, args.models, args.out,
                                                split=args.split)
        print((args.out / "summary.txt").read_text(), end="")
        print(f"{len(reports)} rows -> {args.out / 'trend.csv'}")
        return 0

    if args.command == "eval":
        from .mesh import load_mesh
        from .metrics import evaluate, write_reports_csv

        pred = load_mesh(args.pred)
        gt = load_mesh(args.gt)
        report = evaluate(pred, gt, n_points=cfg.eval.n_points, seed=cfg.eval.seed)
        print(f"cd={report.cd:.6f} emd={report.emd:.6f} surf={report.surface_error_pct:.2f}% "
              f"({'exact' if report.emd_exact else 'approx'} emd, {report.n_points} points)")
        if args.out:
            write_reports_csv(args.out, [report])
        return 0

    if args.command == "mesh-sdf":
        from .mesh import load_mesh, normalize_mesh
        from .sdfdata import generate_sdf_dataset, save_sdf_dataset

        mesh = load_mesh(args.mesh, require_watertight=True)
        normalized, scale, offset = normalize_mesh(mesh)
        sd = cfg.sdf_data
        pts, s = generate_sdf_dataset(normalized, sd.n_surface, sd.n_uniform, sd.sigma_near,
                                      seed=sd.seed)
        save_sdf_dataset(args.out, pts, s)
        print(f"wrote {len(pts)} samples to {args.out} "
              f"(normalization scale={scale:.6g} offset=({offset[0]:.6g},{offset[1]:.6g},{offset[2]:.6g}))")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
