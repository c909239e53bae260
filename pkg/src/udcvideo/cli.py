"""Command-line entry point: ``udcvideo <command> [options] [key=value ...]``.

Trailing ``section.key=value`` arguments override the YAML config. All
outputs go under ``--out``. Exit status: 0 success, 1 runtime failure,
2 bad configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .core.config import ConfigError, RunConfig, dump_config, load_config

log = logging.getLogger("udcvideo")


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("udcvideo.presets").iterdir()
                  if p.name.endswith(".yaml"))


def resolve_config(spec: str | None, overrides: list[str]) -> RunConfig:
    """``spec`` is a YAML path or the name of a shipped preset."""
    if spec is None:
        return load_config(None, overrides)
    path = Path(spec)
    if not path.exists() and spec in preset_names():
        with resources.as_file(resources.files("udcvideo.presets") / f"{spec}.yaml") as p:
            return load_config(p, overrides)
    if not path.exists():
        raise ConfigError("--config", f"no such file or preset {spec!r}")
    return load_config(path, overrides)


def _cmd_synth(args, cfg: RunConfig) -> int:
    from .synth import generate_dataset, procedural_sources

    sources = args.src if args.src else procedural_sources(cfg)
    manifest = generate_dataset(sources, cfg, args.out)
    dump_config(cfg, Path(args.out) / "config.yaml")
    print(f"wrote {len(manifest.clips)} clips -> {Path(args.out) / 'manifest.json'}")
    return 0


def _cmd_train(args, cfg: RunConfig) -> int:
    from .core.manifest import load_manifest
    from .plotting import plot_training_log
    from .training import train

    manifest = load_manifest(args.data)
    result = train(manifest, cfg, args.out, resume=args.resume)
    plot_training_log(result.log_path, Path(args.out) / "train_curves.png")
    print(f"trained {result.iterations} iterations, final loss {result.final_loss:.5f}; "
          f"checkpoint {result.checkpoint}")
    return 0


def _cmd_infer(args, cfg: RunConfig) -> int:
    from .core.manifest import load_manifest
    from .pipeline import infer_manifest
    from .training import model_from_checkpoint

    model, _, it = model_from_checkpoint(args.checkpoint)
    out = infer_manifest(model, load_manifest(args.data), args.out, stream=args.stream)
    print(f"restored {len(out.clips)} clips with checkpoint at iteration {it} -> {args.out}")
    return 0


def _cmd_eval(args, cfg: RunConfig) -> int:
    from .core.manifest import load_manifest
    from .evalmetrics import evaluate
    from .plotting import plot_report

    reference = load_manifest(args.reference)
    restored = load_manifest(args.restored)
    report = evaluate(restored, reference, args.stream, args.reference_stream, args.crop, cfg.digest())
    report.write(args.out, "report")
    baseline = None
    if reference.clips and "degraded" in reference.clips[0].streams:
        baseline = evaluate(reference, reference, "degraded", args.reference_stream, args.crop, cfg.digest())
        baseline.write(args.out, "input_report")
        print(f"input     {baseline.summary()}")
    plot_report(report, Path(args.out) / "report_psnr.png", baseline)
    print(f"restored  {report.summary()}")
    return 0


def _cmd_mask(args, cfg: RunConfig) -> int:
    from .core.frames import load_clip
    from .masks import mask_at_scale, soft_mask
    from .plotting import plot_masks, save_gray

    clip = load_clip(args.input).clamped()
    out = Path(args.out)
    frames = range(len(clip)) if args.frame is None else [args.frame]
    for t in frames:
        frame = clip.data[t]
        pair = soft_mask(frame, cfg.mask) if args.scale == 1 else mask_at_scale(frame, cfg.mask, args.scale)
        save_gray(pair.flare[0], out / "flare" / f"{t:06d}.png")
        save_gray(pair.haze[0], out / "haze" / f"{t:06d}.png")
        if t == frames[0]:
            plot_masks(frame, *((pair.flare, pair.haze) if args.scale == 1 else
                                (np.kron(pair.flare, np.ones((1, args.scale, args.scale))),
                                 np.kron(pair.haze, np.ones((1, args.scale, args.scale))))),
                       out / "masks.png", cfg.mask.tau)
    print(f"wrote flare/haze maps for {len(frames)} frames -> {out}")
    return 0


def _cmd_psf_viz(args, cfg: RunConfig) -> int:
    from .plotting import plot_psf
    from .psf import load_psf, psf_transform
    from .synth import base_psf, sample_motion
    from .core.rng import seeded_rng

    psf = load_psf(args.psf) if args.psf else base_psf(cfg.synth)
    out = Path(args.out)
    plot_psf(psf, out / "psf.png")
    if args.steps > 0:
        s = cfg.synth
        script = sample_motion(s.max_translation, s.max_rotation, s.max_perspective, args.steps + 1,
                               seeded_rng(cfg.seed, "psf-viz"), (s.height, s.width))
        k = psf
        for t, h in enumerate(script.homographies, start=1):
            k = psf_transform(k, h)
            plot_psf(k, out / f"psf_{t:03d}.png")
    print(f"rendered PSF ({psf.channels}x{psf.size}x{psf.size}) -> {out}")
    return 0


def _cmd_smoke(args, cfg: RunConfig) -> int:
    from .pipeline import end_to_end_smoke, smoke_config

    base = cfg.replace(seed=args.seed) if args.config else smoke_config(args.seed)
    summary = end_to_end_smoke(args.seed, args.out, base)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


COMMANDS = {"synth": _cmd_synth, "train": _cmd_train, "infer": _cmd_infer, "eval": _cmd_eval,
            "mask": _cmd_mask, "psf-viz": _cmd_psf_viz, "smoke": _cmd_smoke}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="udcvideo", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML config file or preset name (%s)" % ", ".join(preset_names()))
        p.add_argument("--out", required=True, help="output root directory")
        p.add_argument("overrides", nargs="*", metavar="key=value", help="dotted config overrides")
        return p

    p = add("synth", "synthesize a degraded dataset and its manifest")
    p.add_argument("--src", nargs="*", help="source clip directories (default: procedural scenes)")
    p = add("train", "train the restoration network")
    p.add_argument("--data", required=True, help="dataset manifest (file or directory)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p = add("infer", "restore every clip of a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stream", default="degraded", help="input stream to restore")
    p = add("eval", "PSNR/SSIM report of restored clips against references")
    p.add_argument("--restored", required=True, help="manifest written by infer")
    p.add_argument("--reference", required=True, help="dataset manifest with clean frames")
    p.add_argument("--stream", default="restored")
    p.add_argument("--reference-stream", default="clean")
    p.add_argument("--crop", type=int, default=0, help="ignore this many border pixels")
    p = add("mask", "render flare/haze maps of a clip as grayscale images")
    p.add_argument("--input", required=True, help="clip directory")
    p.add_argument("--frame", type=int, help="single frame index (default: all)")
    p.add_argument("--scale", type=int, default=1, choices=(1, 2, 4, 8))
    p = add("psf-viz", "render a PSF (log scale) and optionally its motion evolution")
    p.add_argument("--psf", help="PSF file (default: the configured synthetic PSF)")
    p.add_argument("--steps", type=int, default=0, help="motion steps to render")
    p = add("smoke", "tiny end-to-end synth/train/infer/eval run")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, AssertionError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
