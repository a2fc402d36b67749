"""Command-line front end: ``panoshift {adapt,eval,scene,project}``.

Exit codes: 0 success, 2 invalid arguments, 3 I/O failure, 4 pipeline error.
"""

from __future__ import annotations

import argparse
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np
from PIL import UnidentifiedImageError

from . import io
from .config import FOOTPRINTS, Config, ConfigError
from .cubemap import cubemap_to_equirect, equirect_to_cubemap, stack_faces, unstack_faces
from .geometry import GeometryError
from .metrics import MetricError, MetricsReport, config_hash, crop_view, image_metrics, measure_run
from .render import PipelineError, adapt
from .scene import SceneError, default_scene, load_scene, raycast

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_PIPELINE = 0, 2, 3, 4

log = logging.getLogger("panoshift")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


def _read(reader, path, *args):
    try:
        return reader(path, *args)
    except (OSError, io.FormatError, UnidentifiedImageError, ValueError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def output_paths(prefix) -> dict:
    prefix = str(prefix)
    return {"color": Path(prefix + ".color.png"), "depth": Path(prefix + ".depth.pfm"),
            "report": Path(prefix + ".report.json")}


def _config_from_args(args) -> Config:
    base = Config.load(args.config) if args.config else Config()
    return base.replace(tau=args.tau, dilation=args.dilation, min_edge_length=args.min_edge_length,
                        patch_size=args.patch_size, footprint=args.footprint, width=args.width,
                        height=args.height, workers=args.workers)


def cmd_adapt(args) -> int:
    try:
        config = _config_from_args(args)
    except (ConfigError, OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if not np.isfinite(args.dy):
        raise UsageError("--dy must be finite")
    color = _read(io.read_color, args.color)
    depth = _read(io.read_depth, args.depth, args.depth_scale)
    seg = _read(io.read_labels, args.seg) if args.seg else None
    if color.shape[:2] != depth.shape or (seg is not None and seg.shape != depth.shape):
        raise UsageError(f"input sizes differ: color {color.shape[:2]}, depth {depth.shape}"
                         + (f", seg {seg.shape}" if seg is not None else ""))
    if depth.shape[1] != 2 * depth.shape[0]:
        raise UsageError(f"input must be 2:1 equirectangular, got {depth.shape[1]}x{depth.shape[0]}")

    view, cost = measure_run(adapt, color, depth, seg, args.dy, config)
    report = MetricsReport(
        metrics={"wall_time_s": cost.wall_time_s, "peak_mem_mb": cost.peak_mem_mb, "peak_rss_mb": cost.peak_rss_mb},
        metadata={"command": "adapt", "inputs": {"color": str(args.color), "depth": str(args.depth),
                                                 "seg": str(args.seg) if args.seg else None},
                  "dy": args.dy, "config": config.to_dict(), "config_hash": config_hash(config.to_dict()),
                  "edges": view.stats["edges"], "synthesized_pixels": int(sum(view.stats["synthesized"])),
                  "pool_size": view.stats["pool_size"], "holes": int((~view.coverage).sum())},
    )
    paths = output_paths(args.out)
    io.commit_outputs({
        paths["color"]: io.encode_png(io.quantize_color(view.color)),
        paths["depth"]: io.encode_pfm(view.depth),
        paths["report"]: io.dumps_json(report.to_dict()).encode(),
    })
    log.info("adapt: %d edges, %.2fs, wrote %s.*", view.stats["edges"], cost.wall_time_s, args.out)
    return EXIT_OK


def _external_lpips(command):
    def score(pred, gt):
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            a, b = Path(tmp) / "pred.png", Path(tmp) / "gt.png"
            io.write_color(a, pred)
            io.write_color(b, gt)
            out = subprocess.run([*command, str(a), str(b)], capture_output=True, check=True, text=True)
            return float(out.stdout.strip().split()[-1])

    return score


def cmd_eval(args) -> int:
    pred = _read(io.read_color, args.pred_color)
    gt = _read(io.read_color, args.gt_color)
    if pred.shape != gt.shape:
        raise UsageError(f"colour sizes differ: {pred.shape[:2]} vs {gt.shape[:2]}")
    if (args.pred_depth is None) != (args.gt_depth is None):
        raise UsageError("--pred-depth and --gt-depth go together")
    pd = gd = None
    if args.pred_depth:
        pd = _read(io.read_depth, args.pred_depth, args.depth_scale)
        gd = _read(io.read_depth, args.gt_depth, args.depth_scale)
        if pd.shape != gd.shape or pd.shape != gt.shape[:2]:
            raise UsageError("depth sizes differ from each other or from the colour images")
    lpips = _external_lpips(args.lpips_command.split()) if args.lpips_command else None
    if args.crop_fov:
        pred, gt = crop_view(pred, args.crop_fov), crop_view(gt, args.crop_fov)
        if pd is not None:
            pd, gd = crop_view(pd, args.crop_fov), crop_view(gd, args.crop_fov)
    try:
        metrics = image_metrics(pred, gt, pd, gd, lpips)
    except MetricError as exc:
        raise UsageError(str(exc)) from exc
    report = MetricsReport(metrics=metrics, metadata={
        "command": "eval", "pred_color": str(args.pred_color), "gt_color": str(args.gt_color),
        "pred_depth": str(args.pred_depth) if args.pred_depth else None,
        "gt_depth": str(args.gt_depth) if args.gt_depth else None,
        "crop_fov": args.crop_fov,
    })
    io.write_json(args.out, report.to_dict())
    return EXIT_OK


def height_stem(height: float) -> str:
    return f"h{height:.3f}"


def cmd_scene(args) -> int:
    if not args.heights:
        raise UsageError("at least one height is required")
    if args.height <= 0:
        raise UsageError("--height must be positive")
    try:
        scene = load_scene(args.spec) if args.spec else default_scene()
        scenes = [scene.with_height(hgt) for hgt in args.heights]
        for s in scenes:
            s.validate()
    except (SceneError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid scene: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {}
    for hgt, s in zip(args.heights, scenes):
        color, depth = raycast(s, 2 * args.height, args.height)
        stem = height_stem(hgt)
        payload[out / f"{stem}.color.png"] = io.encode_png(io.quantize_color(color))
        payload[out / f"{stem}.depth.pfm"] = io.encode_pfm(depth)
    io.commit_outputs(payload)
    return EXIT_OK


def cmd_project(args) -> int:
    src = Path(args.input)
    is_float = src.suffix.lower() == ".pfm"
    img = _read(io.read_pfm if is_float else io.read_color, src).astype(np.float64)
    if args.size < 2:
        raise UsageError("--size must be at least 2")
    try:
        if args.mode == "equirect2cube":
            out = stack_faces(equirect_to_cubemap(img, args.size))
        else:
            out = cubemap_to_equirect(unstack_faces(img), 2 * args.size, args.size)
    except GeometryError as exc:
        raise UsageError(str(exc)) from exc
    dst = Path(args.out)
    if is_float:
        io.write_pfm(dst, out)
    else:
        io.write_color(dst, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.HelpFormatter
    p = argparse.ArgumentParser(prog="panoshift", description="Eye-height adaptation of RGB-D panoramas.",
                                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    d = Config()

    a = sub.add_parser("adapt", help="re-render a panorama from a shifted eye height", formatter_class=fmt)
    a.add_argument("--color", required=True, help="8-bit RGB equirectangular PNG")
    a.add_argument("--depth", required=True, help="radial depth, PFM (metres) or 16-bit PNG")
    a.add_argument("--seg", help="optional segmentation label PNG")
    a.add_argument("--dy", type=float, required=True, help="eye height change in metres (positive = up)")
    a.add_argument("--out", required=True, help="output prefix; writes PREFIX.color.png, .depth.pfm, .report.json")
    a.add_argument("--config", help="JSON config file; flags override its values")
    a.add_argument("--depth-scale", type=float, default=0.001, help="metres per unit for 16-bit PNG depth (default 0.001)")
    a.add_argument("--tau", type=float, help=f"discontinuity depth ratio (default {d.tau})")
    a.add_argument("--dilation", type=int, help=f"context/synthesis radius in pixels (default {d.dilation})")
    a.add_argument("--min-edge-length", type=int, help=f"shortest kept edge (default {d.min_edge_length})")
    a.add_argument("--patch-size", type=int, help=f"exemplar patch size (default {d.patch_size})")
    a.add_argument("--footprint", choices=FOOTPRINTS, help=f"splat footprint (default {d.footprint})")
    a.add_argument("--width", type=int, help="output width (default: input width)")
    a.add_argument("--height", type=int, help="output height (default: input height)")
    a.add_argument("--workers", type=int, help=f"threads for reprojection (default {d.workers})")
    a.set_defaults(func=cmd_adapt)

    e = sub.add_parser("eval", help="score a rendered panorama against ground truth", formatter_class=fmt)
    e.add_argument("--pred-color", required=True)
    e.add_argument("--gt-color", required=True)
    e.add_argument("--pred-depth")
    e.add_argument("--gt-depth")
    e.add_argument("--depth-scale", type=float, default=0.001, help="metres per unit for 16-bit PNG depth (default 0.001)")
    e.add_argument("--crop-fov", type=float, default=None,
                   help="score only the central crop of this many degrees (default: full frame)")
    e.add_argument("--lpips-command", default=None,
                   help="external scorer run as 'CMD pred.png gt.png' printing one number; adds the lpips key")
    e.add_argument("--out", required=True, help="report path (JSON)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("scene", help="ray-cast ground-truth RGB-D panoramas", formatter_class=fmt)
    s.add_argument("--spec", help="scene JSON (default: built-in 8x8x3 m room with a cube)")
    s.add_argument("--heights", type=float, nargs="*", required=True, help="camera heights in metres")
    s.add_argument("--height", type=int, default=512, help="panorama height in pixels, width is twice this (default 512)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_scene)

    j = sub.add_parser("project", help="convert between equirectangular and stacked cubemap", formatter_class=fmt)
    j.add_argument("--in", dest="input", required=True, help="PNG (colour) or PFM (float) image")
    j.add_argument("--mode", required=True, choices=("equirect2cube", "cube2equirect"))
    j.add_argument("--size", type=int, required=True,
                   help="face size for equirect2cube, output height for cube2equirect")
    j.add_argument("--out", required=True)
    j.set_defaults(func=cmd_project)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"panoshift: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except InputError as exc:
        print(f"panoshift: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PipelineError as exc:
        print(f"panoshift: pipeline error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_PIPELINE
    except OSError as exc:
        print(f"panoshift: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
