"""Command-line entry points.

Subcommands: gen-synthetic, train-ioc, train-fusion, evaluate, colorize,
serve. Training configs are JSON files matching training.TrainConfig.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _cmd_gen_synthetic(args) -> int:
    from .dataset import make_synthetic_dataset, save_manifest

    samples = make_synthetic_dataset(
        args.count, seed=args.seed, max_objects=args.max_objects
    )
    save_manifest(samples, args.out, split=args.split)
    print(f"wrote {len(samples)} scenes to {args.out}")
    return 0


def _load_config(path: str, stage: str, overrides: dict):
    from .training import TrainConfig

    if path:
        config = TrainConfig.from_json(path)
        if config.stage != stage:
            raise SystemExit(f"config stage is {config.stage!r}, expected {stage!r}")
    else:
        config = TrainConfig(stage=stage)
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    return config


def _cmd_train(args, stage: str) -> int:
    from .training import train

    overrides = {"steps": args.steps, "seed": args.seed, "resolution": args.resolution}
    if stage == "fusion":
        overrides["ioc_checkpoint"] = args.ioc_checkpoint
    config = _load_config(args.config, stage, overrides)
    result = train(config, args.out_dir, resume_from=args.resume_from)
    last = result.history[-1] if result.history else {}
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    if last:
        print(f"final step {last['step']}: total={last['total']:.4f} l1={last['l1']:.4f}")
    return 0


def _cmd_evaluate(args) -> int:
    from .dataset import load_manifest
    from .evaluation import StubLPIPS, channel_histogram_report, evaluate, write_metric_table
    from .pipeline import ColorizePipeline

    samples = load_manifest(args.manifest)
    pipeline = ColorizePipeline(args.ioc_ckpt, args.fusion_ckpt)
    adapter = StubLPIPS() if args.lpips == "stub" else None
    if args.lpips == "external":
        from .evaluation import ExternalLPIPS

        adapter = ExternalLPIPS()
    summary = evaluate(samples, pipeline.evaluation_predictor(), lpips_adapter=adapter)
    write_metric_table(summary, args.out)
    if args.hist_dir:
        os.makedirs(args.hist_dir, exist_ok=True)
        predict = pipeline.evaluation_predictor()
        for i, sample in enumerate(samples[: args.hist_count]):
            pred = predict(sample)["rgb"]
            plot = os.path.join(args.hist_dir, f"hist_{i:05d}.png")
            try:
                report = channel_histogram_report(pred, sample.image, plot_path=plot)
            except ImportError:
                report = channel_histogram_report(pred, sample.image)
            with open(os.path.join(args.hist_dir, f"hist_{i:05d}.json"), "w") as f:
                json.dump(report.to_dict(), f)
        print(f"histogram reports in {args.hist_dir}")
    print(f"evaluated {len(summary.rows)} samples ({len(summary.failures)} failures)")
    if summary.mean_psnr is not None:
        lp = "n/a" if summary.mean_lpips is None else f"{summary.mean_lpips:.4f}"
        print(
            f"mean PSNR {summary.mean_psnr:.3f} dB | mean SSIM {summary.mean_ssim:.4f} "
            f"| mean LPIPS {lp}"
        )
    print(f"table written to {args.out}")
    return 0


def _cmd_colorize(args) -> int:
    from .pipeline import ColorizePipeline
    from .pngio import decode_png, encode_png
    from .service import _luminance_of, _specs_to_records, InstanceSpec

    with open(args.image, "rb") as f:
        arr = decode_png(f.read())
    L = _luminance_of(arr)
    specs = []
    if args.instances:
        with open(args.instances) as f:
            specs = [InstanceSpec(**obj) for obj in json.load(f)]
    records = _specs_to_records(specs, arr.shape[0], arr.shape[1])
    pipeline = ColorizePipeline(args.ioc_ckpt, args.fusion_ckpt)
    result = pipeline.colorize_gray(L, records, args.scene_caption)
    with open(args.out, "wb") as f:
        f.write(encode_png(result.rgb.pixels, bit_depth=args.bits))
    print(f"colorized {args.image} -> {args.out}")
    print(f"instances: {len(records)}, out-of-gamut pixels: {result.rgb.out_of_gamut_count}")
    return 0


def _cmd_serve(args) -> int:
    from .service import ServiceConfig, serve

    config = ServiceConfig.from_env(
        ioc_checkpoint=args.ioc_ckpt,
        fusion_checkpoint=args.fusion_ckpt,
        detector=args.detector,
        text_encoder=args.text_encoder,
        png_bits=args.bits,
    )
    serve(config, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textcolorize",
        description="Text-guided instance-level image colorization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic scene manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True, help="manifest path (JSONL)")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--max-objects", type=int, default=3)
    p.set_defaults(func=_cmd_gen_synthetic)

    for stage in ("ioc", "fusion"):
        p = sub.add_parser(f"train-{stage}", help=f"train the {stage} stage")
        p.add_argument("--config", help="JSON TrainConfig file")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--steps", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--resolution", type=int)
        p.add_argument("--resume-from", help="checkpoint to resume")
        if stage == "fusion":
            p.add_argument("--ioc-checkpoint", help="frozen instance-stage checkpoint")
        p.set_defaults(func=lambda a, s=stage: _cmd_train(a, s))

    p = sub.add_parser("evaluate", help="run metrics over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ioc-ckpt", required=True)
    p.add_argument("--fusion-ckpt", required=True)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--lpips", choices=("none", "stub", "external"), default="stub")
    p.add_argument("--hist-dir", help="also write channel-histogram reports here")
    p.add_argument("--hist-count", type=int, default=8, help="samples to report")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("colorize", help="colorize one image")
    p.add_argument("--image", required=True, help="input PNG (gray or RGB)")
    p.add_argument("--ioc-ckpt", required=True)
    p.add_argument("--fusion-ckpt", required=True)
    p.add_argument("--scene-caption", default="")
    p.add_argument("--instances", help="JSON file: list of {box, caption, ...}")
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=_cmd_colorize)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ioc-ckpt", required=True)
    p.add_argument("--fusion-ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--detector", choices=("stub", "external", "none"), default="stub")
    p.add_argument("--text-encoder", choices=("stub", "external"), default="stub")
    p.add_argument("--bits", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
