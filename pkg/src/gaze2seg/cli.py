"""Command-line entry point: ``gaze2seg <subcommand> ...``."""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path


from . import synth
from .errors import Gaze2SegError
from .ingest import LabelMask, read_mask, read_volume, write_mask, write_scalar_map
from .metrics import evaluate
from .pipeline import (PipelineConfig, attention_stage, load_config, load_transform,
                       read_regions_csv, rw_stage, run_pipeline, seeding_stage,
                       select_regions, write_attention_maps, write_regions_csv)
from .seeding import read_seeds, write_seeds

log = logging.getLogger("gaze2seg")

_HELP = {
    "epsilon_mm": "jitter neighbourhood radius in mm",
    "t_hat_ms": "dwell below which gaze earns no attention",
    "lambda_": "position weight in the patch distance",
    "k_patches": "number of most similar patches per pixel",
    "scales": "comma-separated resize factors",
    "top_k": "number of regions to segment (0: all with attention >= min-attention)",
    "jobs": "regions processed concurrently",
}


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline parameters (flag > --config file > default)")
    g.add_argument("--config", help="flat key = value config file")
    for key, f in PipelineConfig.keys().items():
        if key == "out":
            continue
        g.add_argument("--" + key.replace("_", "-"), dest=f.name, default=None,
                       metavar=key.upper(), help=_HELP.get(f.name, f"default {f.default}"))
    return p


def _config(args, **extra) -> PipelineConfig:
    overrides = {}
    for key, f in PipelineConfig.keys().items():
        raw = getattr(args, f.name, None)
        if raw is not None:
            overrides[key] = PipelineConfig.parse_value(key, raw)
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return load_config(args.config, overrides)


def _inputs(p, viewer=True):
    p.add_argument("--volume", required=True, help="volume header (.hdr)")
    if viewer:
        p.add_argument("--gaze", required=True, help="gaze CSV")
        p.add_argument("--viewer", help="viewer event CSV")
        p.add_argument("--calibration", help="scene-to-stimulus homography file")
        p.add_argument("--identity-calibration", action="store_true",
                       help="use the identity transform when no calibration file exists")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_synth(args):
    phantom, gaze = synth.PRESETS[args.preset]()
    if args.noise_sigma is not None:
        phantom = replace(phantom, noise_sigma=args.noise_sigma)
    if args.seed is not None:
        phantom = replace(phantom, rng_seed=args.seed)
        gaze = replace(gaze, rng_seed=args.seed + 1)
    if args.pattern:
        gaze = replace(gaze, pattern=args.pattern)
    synth.write_case(args.out, phantom, gaze)
    for p in sorted(Path(args.out).iterdir()):
        if p.suffix in (".hdr", ".raw", ".csv"):
            print(f"{_sha256(p)}  {p.name}")
    return 0


def cmd_attention(args):
    cfg = _config(args, out=args.out)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    volume = read_volume(args.volume)
    transform = load_transform(args.calibration, args.identity_calibration)
    maps, ranked, _ = attention_stage(volume, args.gaze, args.viewer, cfg, transform)
    selected = select_regions(ranked, cfg.top_k or None, cfg.min_attention)
    write_attention_maps(out, maps, volume)
    write_regions_csv(out / "regions.csv", selected)
    if args.figures:
        from . import plotting
        plotting.render_all(out, volume, maps, [])
    print(f"{len(selected)} attention region(s) -> {out / 'regions.csv'}")
    return 0


def cmd_saliency(args):
    cfg = _config(args, out=args.out)
    out = Path(cfg.out)
    volume = read_volume(args.volume)
    regions = read_regions_csv(args.regions)
    failed = 0
    for rank, region in enumerate(regions, 1):
        d = out / f"region_{rank}"
        d.mkdir(parents=True, exist_ok=True)
        try:
            smap, seeds = seeding_stage(volume, region, cfg)
        except Gaze2SegError as exc:
            exc.region = rank
            log.warning("%s", exc)
            failed += 1
            continue
        write_scalar_map(smap.values, d / "saliency.hdr", volume.spacing_mm)
        write_seeds(d / "seeds.csv", seeds)
        print(f"region {rank}: fg={seeds.fg} bg={seeds.bg} -> {d / 'seeds.csv'}")
    return 5 if regions and failed == len(regions) else 0


def cmd_rw(args):
    cfg = _config(args)
    volume = read_volume(args.volume)
    mask = rw_stage(volume, read_seeds(args.seeds), cfg)
    write_mask(LabelMask(mask, volume.spacing_mm), args.out)
    print(f"{int(mask.sum())} voxel(s) -> {args.out}")
    return 0


def cmd_eval(args):
    pred = read_mask(args.pred)
    ref = read_mask(args.ref)
    report = evaluate(pred.values, ref.values, pred.spacing_mm)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_run(args):
    cfg = _config(args, out=args.out)
    result = run_pipeline(args.volume, args.gaze, args.viewer, cfg,
                          calibration=args.calibration,
                          identity_calibration=args.identity_calibration,
                          reference=args.reference, figures=args.figures)
    r = result.report
    print(f"regions={len(r['regions'])} dsc={r['dsc']} hd_mm={r['hd_mm']} "
          f"-> {Path(cfg.out) / 'report.json'}")
    return result.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaze2seg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    cfg = _config_parent()

    p = sub.add_parser("synth", help="write a synthetic phantom and reading session")
    p.add_argument("--preset", choices=sorted(synth.PRESETS), default="demo")
    p.add_argument("--out", required=True)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--pattern", choices=("driller", "scanner"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("attention", parents=[cfg], help="gaze logs -> attention maps + regions")
    _inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("saliency", parents=[cfg], help="regions -> saliency maps + seed CSVs")
    _inputs(p, viewer=False)
    p.add_argument("--regions", required=True, help="regions.csv from `attention`")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("rw", parents=[cfg], help="seed CSV -> random walker mask")
    _inputs(p, viewer=False)
    p.add_argument("--seeds", required=True)
    p.add_argument("--out", required=True, help="mask header path")
    p.set_defaults(func=cmd_rw)

    p = sub.add_parser("eval", help="Dice and Hausdorff of two masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", parents=[cfg], help="full pipeline")
    _inputs(p)
    p.add_argument("--reference", help="reference mask for evaluation")
    p.add_argument("--out", help="output directory")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Gaze2SegError as exc:
        print(f"gaze2seg {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"gaze2seg {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
