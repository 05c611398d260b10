"""Command-line entry point: ``birescale <command> ...``.

Exit codes: 0 success, 1 usage, 2 I/O or file format, 3 contract violation.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .errors import ContractViolation, FormatError, UnsupportedConfiguration
from .harness import (ENGINE_KERNELS, cmd_asym, cmd_bigscale, cmd_idem, cmd_metrics,
                      cmd_sweep, make_engine, parse_scales, symmetric_scale)
from .imageio import load_corpus, read_image, synth_corpus, write_image
from .metrics import MetricSpace

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONTRACT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _engine_flags(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--model", type=Path, help="trained model file (.bair)")
    g.add_argument("--kernel", choices=ENGINE_KERNELS, help="classic resampler instead of a model")


def _eval_flags(p):
    p.add_argument("corpus", type=Path, help="directory of PNG/PFM images")
    _engine_flags(p)
    p.add_argument("--quantize", type=_on_off, default=True, metavar="{on,off}",
                   help="round to 8 bits between stages (default on)")
    p.add_argument("--space", choices=("rgb", "y"), default="rgb")
    p.add_argument("--out", type=Path, help="CSV report path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="birescale", description="Bidirectional arbitrary-scale image rescaling.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("rescale", help="rescale one image")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _engine_flags(p)
    p.add_argument("--size", help="output size HxW")
    p.add_argument("--scale", type=float, help="downscale factor (>1 shrinks, <1 enlarges)")
    p.add_argument("--scale-v", type=float)
    p.add_argument("--scale-h", type=float)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("corpus", type=Path, help="directory of training images")
    p.add_argument("--config", type=Path, help="key = value training config")
    p.add_argument("--stage", choices=("pretrain", "base", "finetune-N", "finetune-asym"))
    p.add_argument("--model", type=Path, help="initial model (default: fresh)")
    p.add_argument("--cycles", type=int, help="N for finetune-N")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True, help="output model path")

    p = sub.add_parser("idem", help="multi-cycle idempotence report")
    _eval_flags(p)
    p.add_argument("--scale", type=float, required=True)
    p.add_argument("--cycles", type=int, default=5)
    p.add_argument("--mode", choices=("closed", "open"), default="closed")

    p = sub.add_parser("sweep", help="PSNR/SSIM over a list of scales")
    _eval_flags(p)
    p.add_argument("--scale", default="1.1:4.0:0.1", help="lo:hi:step or a comma list")

    p = sub.add_parser("asym", help="asymmetric-scale protocol")
    _eval_flags(p)
    p.add_argument("--scale-v", type=float, required=True)
    p.add_argument("--scale-h", type=float, required=True)
    p.add_argument("--conversion", choices=("pre-interp", "native"), default="native")

    p = sub.add_parser("bigscale", help="large-scale protocol (downscale capped at x4)")
    _eval_flags(p)
    p.add_argument("--scale", type=float, required=True)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two images")
    p.add_argument("ref", type=Path)
    p.add_argument("test", type=Path)
    p.add_argument("--space", choices=("rgb", "y"), default="rgb")
    p.add_argument("--crop", type=int, default=0)

    p = sub.add_parser("synth", help="write a deterministic synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    return ap


def _target_size(args, h, w):
    given = [args.size is not None, args.scale is not None,
             args.scale_v is not None or args.scale_h is not None]
    if sum(given) != 1:
        raise UsageError("give exactly one of --size, --scale or --scale-v/--scale-h")
    if args.size is not None:
        try:
            oh, ow = (int(v) for v in args.size.lower().split("x"))
        except ValueError:
            raise UsageError(f"--size must look like 64x48, got {args.size!r}") from None
        return oh, ow
    sv = args.scale if args.scale is not None else args.scale_v
    sh = args.scale if args.scale is not None else args.scale_h
    if sv is None or sh is None:
        raise UsageError("--scale-v and --scale-h go together")
    if sv <= 0 or sh <= 0:
        raise UsageError("scales must be positive")
    return max(1, math.floor(h / sv + 0.5)), max(1, math.floor(w / sh + 0.5))


def _run_rescale(args):
    image = read_image(args.input)
    _, h, w = image.shape
    oh, ow = _target_size(args, h, w)
    engine = make_engine(args.model, args.kernel)
    # the model engine refuses mixed directions; kernels accept anything
    out = engine.down(image, oh, ow) if (oh <= h and ow <= w) else engine.up(image, oh, ow)
    write_image(args.out, out)
    print(f"{args.input} {h}x{w} -> {args.out} {oh}x{ow}")


def _run_train(args):
    from .serialize import load, save
    from .training import TrainConfig, load_config, stage_loss, train, write_curve
    from dataclasses import replace

    config, loss, stage, init = (TrainConfig(), None, None, None)
    if args.config is not None:
        config, loss, stage, init = load_config(args.config)
    stage = args.stage or stage or "pretrain"
    overrides = {k: v for k, v in (("steps", args.steps), ("seed", args.seed)) if v is not None}
    config = replace(config, **overrides)
    if loss is None:
        loss = stage_loss(stage, args.cycles or 1)
    elif args.cycles is not None:
        loss = replace(loss, cycles=args.cycles)
    init_path = args.model or (Path(init) if init else None)
    model = load(init_path) if init_path else None
    corpus = [img for _, img in load_corpus(args.corpus)]
    result = train(config, loss, corpus, stage, model=model, log=lambda m: print(m, file=sys.stderr))
    save(result.model, args.out)
    curve_path = args.out.with_name(args.out.name + ".loss.csv")
    write_curve(result.curve, curve_path)
    print(f"saved {args.out} ({len(result.curve)} steps, final loss {result.curve[-1][1]:.5f})"
          if result.curve else f"saved {args.out} (0 steps)")


def _emit(report, out):
    if out is None:
        sys.stdout.write(report.to_csv())
    else:
        report.write(out)


def _eval_common(args):
    corpus = [img for _, img in load_corpus(args.corpus)]
    engine = make_engine(args.model, args.kernel)
    return corpus, engine, MetricSpace(args.space)


def _run_eval(args):
    corpus, engine, space = _eval_common(args)
    if args.command == "idem":
        report = cmd_idem(corpus, engine, args.scale, args.cycles, args.mode, args.quantize, space)
    elif args.command == "sweep":
        report = cmd_sweep(corpus, engine, parse_scales(args.scale), args.quantize, space)
    elif args.command == "asym":
        report = cmd_asym(corpus, engine, args.scale_v, args.scale_h, args.conversion, args.quantize, space)
        print(f"s_m = {symmetric_scale(args.scale_v, args.scale_h):.9f}", file=sys.stderr)
    else:
        report = cmd_bigscale(corpus, engine, args.scale, args.quantize, space)
    _emit(report, args.out)


def _run_metrics(args):
    p, s = cmd_metrics(read_image(args.ref), read_image(args.test), MetricSpace(args.space, args.crop))
    print(f"psnr_db={'inf' if math.isinf(p) else f'{p:.6f}'} ssim={s:.6f}")


def _run_synth(args):
    paths = synth_corpus(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} images to {args.out}")


COMMANDS = {"rescale": _run_rescale, "train": _run_train, "idem": _run_eval, "sweep": _run_eval,
            "asym": _run_eval, "bigscale": _run_eval, "metrics": _run_metrics, "synth": _run_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"birescale {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractViolation, UnsupportedConfiguration) as exc:
        print(f"birescale {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (OSError, FormatError) as exc:
        print(f"birescale {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
