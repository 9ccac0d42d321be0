"""Command-line interface: ``texgs render|train|eval|synth|ablate``.

CSV outputs
  train   log.csv      iteration, loss, l1, dssim, psnr_eval
  eval    metrics.csv  image, psnr, ssim  (last row: mean)
  ablate  ablation.csv color_degree, opacity_degree, psnr, ssim

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .errors import CameraFormatError, ContractViolation, PlyFormatError, TrainingError
from .io import load_cameras, load_checkpoint, load_splat_ply, read_image, save_checkpoint, write_image
from .rasterizer import RenderOptions, render
from .scene import ScaleMode
from .synth import KINDS, SynthSpec, generate
from .trainer import TrainConfig, evaluate, train, write_log

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DATA_ERRORS = (PlyFormatError, CameraFormatError, ContractViolation, TrainingError, OSError)

RUN_KEYS = {"color_degree": int, "opacity_degree": int, "scale_mode": str, "test_every": int,
            "tile_size": int, "workers": int}


class UsageError(Exception):
    pass


def parse_config(path) -> tuple[TrainConfig, dict]:
    """Parse flat ``key=value`` lines; ``lambda`` maps to ``TrainConfig.lam``."""
    train_types = {f.name: f.type for f in fields(TrainConfig)}
    cfg_kwargs: dict = {}
    run: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        name = "lam" if key == "lambda" else key
        if name in train_types:
            cast = int if train_types[name] in (int, "int") else float
            cfg_kwargs[name] = cast(value)
        elif key in RUN_KEYS:
            run[key] = RUN_KEYS[key](value)
        else:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
    return TrainConfig(**cfg_kwargs), run


def _parse_background(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("background must be r,g,b")
    return tuple(parts)


def _parse_degrees(text: str) -> list[tuple[int, int]]:
    pairs = []
    for item in text.split(";"):
        if item.strip():
            c, o = item.split(",")
            pairs.append((int(c), int(o)))
    if not pairs:
        raise argparse.ArgumentTypeError("need at least one color,opacity pair")
    return pairs


def load_images(images_dir, count: int) -> list:
    d = Path(images_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"images directory {d} does not exist")
    return [read_image(d / f"{i:05d}.png") for i in range(count)]


def split_indices(count: int, test_every: int) -> tuple[list[int], list[int]]:
    """Every ``test_every``-th image (starting at 0) is held out for testing."""
    test = [i for i in range(count) if i % test_every == 0]
    train_idx = [i for i in range(count) if i % test_every != 0]
    return train_idx, test


def cmd_render(args) -> int:
    scene = load_checkpoint(args.checkpoint)
    if args.scale_mode:
        scene.scale_mode = ScaleMode.parse(args.scale_mode)
    cams = load_cameras(args.cameras)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    opts = RenderOptions(tile_size=args.tile_size, background=args.background, workers=args.workers)
    for i, cam in enumerate(cams):
        write_image(render(scene, cam, opts).image, out / f"{i:05d}.png")
    return EXIT_OK


def _fit(scene, cams, images, cfg, opts, test_every, checkpoint_dir=None):
    train_idx, test_idx = split_indices(len(cams), test_every)
    if not train_idx:
        train_idx = test_idx
    return train(scene, [cams[i] for i in train_idx], [images[i] for i in train_idx], cfg, opts,
                 [cams[i] for i in test_idx], [images[i] for i in test_idx],
                 checkpoint_dir=checkpoint_dir), test_idx


def cmd_train(args) -> int:
    cfg, run = parse_config(args.config) if args.config else (TrainConfig(), {})
    if not Path(args.images_dir).is_dir():
        raise FileNotFoundError(f"images directory {args.images_dir} does not exist")
    scene = load_splat_ply(args.splat_ply, run.get("color_degree", 3),
                           run.get("opacity_degree", 3), run.get("scale_mode", "sqrt"))
    cams = load_cameras(args.cameras)
    images = load_images(args.images_dir, len(cams))
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    print(f"config: iterations={cfg.iterations} lr_color={cfg.lr_color} "
          f"lr_opacity={cfg.lr_opacity} lambda={cfg.lam} seed={cfg.seed} "
          f"color_degree={scene.color_degree} opacity_degree={scene.opacity_degree} "
          f"scale_mode={scene.scale_mode.value}")
    opts = RenderOptions(tile_size=run.get("tile_size", 16), workers=run.get("workers", 1))
    (trained, rows), _ = _fit(scene, cams, images, cfg, opts, run.get("test_every", 8), out)
    save_checkpoint(trained, out / "final.ply")
    write_log(rows, out / "log.csv")
    return EXIT_OK


def cmd_eval(args) -> int:
    scene = load_checkpoint(args.checkpoint)
    cams = load_cameras(args.cameras)
    images = load_images(args.images_dir, len(cams))
    _, test_idx = split_indices(len(cams), args.test_every)
    table = evaluate(scene, [cams[i] for i in test_idx], [images[i] for i in test_idx],
                     indices=test_idx)
    rows = [(str(i), p, s) for i, p, s in table.rows] + [("mean", table.mean_psnr, table.mean_ssim)]
    writer = csv.writer(sys.stdout)
    writer.writerow(["image", "psnr", "ssim"])
    writer.writerows(rows)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image", "psnr", "ssim"])
            w.writerows(rows)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(kind=args.kind, width=args.size, height=args.size, n_cameras=args.cameras,
                     radius=args.radius, seed=args.seed, color_degree=args.color_degree,
                     opacity_degree=args.opacity_degree, count=args.count)
    generate(spec, args.outdir)
    return EXIT_OK


def run_ablation(synth_dir, degrees, cfg: TrainConfig, test_every: int = 8,
                 opts: RenderOptions | None = None) -> list[tuple[int, int, float, float]]:
    """Train one model per (color, opacity) degree pair and score the test split."""
    d = Path(synth_dir)
    cams = load_cameras(d / "cameras.json")
    images = load_images(d / "images", len(cams))
    results = []
    for lc, lo in degrees:
        scene = load_splat_ply(d / "init.ply", lc, lo)
        (trained, _), test_idx = _fit(scene, cams, images, cfg, opts, test_every)
        table = evaluate(trained, [cams[i] for i in test_idx], [images[i] for i in test_idx],
                         opts, indices=test_idx)
        results.append((lc, lo, table.mean_psnr, table.mean_ssim))
        logging.getLogger(__name__).info("degrees (%d,%d): psnr %.3f ssim %.4f",
                                         lc, lo, table.mean_psnr, table.mean_ssim)
    return results


def cmd_ablate(args) -> int:
    cfg = TrainConfig(iterations=args.iterations, eval_every=0, seed=args.seed)
    results = run_ablation(args.synth_dir, args.degrees, cfg, args.test_every)
    out = Path(args.output) if args.output else Path(args.synth_dir) / "ablation.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["color_degree", "opacity_degree", "psnr", "ssim"])
        w.writerows(results)
    for row in results:
        print(",".join(str(v) for v in row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="texgs", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render a checkpoint to one PNG per camera")
    r.add_argument("checkpoint")
    r.add_argument("cameras")
    r.add_argument("outdir")
    r.add_argument("--background", type=_parse_background, default=(0.0, 0.0, 0.0))
    r.add_argument("--tile-size", type=int, default=16)
    r.add_argument("--scale-mode", choices=[m.value for m in ScaleMode])
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_render)

    t = sub.add_parser("train", help="fit SH textures; writes final.ply and log.csv")
    t.add_argument("splat_ply")
    t.add_argument("cameras")
    t.add_argument("images_dir")
    t.add_argument("outdir")
    t.add_argument("--config", help="key=value file overriding training defaults")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="PSNR/SSIM on the held-out split (CSV on stdout)")
    e.add_argument("checkpoint")
    e.add_argument("cameras")
    e.add_argument("images_dir")
    e.add_argument("--test-every", type=int, default=8)
    e.add_argument("--output")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic textured scene")
    s.add_argument("outdir")
    s.add_argument("--kind", choices=KINDS, default="grid")
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--cameras", type=int, default=12)
    s.add_argument("--radius", type=float, default=4.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--color-degree", type=int, default=3)
    s.add_argument("--opacity-degree", type=int, default=3)
    s.add_argument("--count", type=int, default=50)
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("ablate", help="train per SH degree pair and tabulate test metrics")
    a.add_argument("synth_dir")
    a.add_argument("--degrees", type=_parse_degrees,
                   default=_parse_degrees("0,0;1,0;2,0;3,0;3,1;3,2;3,3"),
                   help="semicolon-separated color,opacity pairs")
    a.add_argument("--iterations", type=int, default=2000)
    a.add_argument("--test-every", type=int, default=8)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--output")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"texgs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"texgs: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
