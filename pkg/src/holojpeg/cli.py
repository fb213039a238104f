"""Command-line entry point.

Most subcommands work on a run directory (``--out``) and the configuration
stored alongside it.  ``compress``, ``restore`` and ``reconstruct`` also take
explicit ``--input``/``--output`` files for one-off use.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import arcnn
from .field import FormatError, OpticalConfig, dequantize_phase, load_field, load_phase, load_pgm, save_pgm
from .fresnel import reconstruct
from .jpeg import JfifStream, decode, encode
from .pipeline import ConfigError, Run, StageError, load_config, read_report

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STAGE = 3

log = logging.getLogger("holojpeg")


class UsageError(Exception):
    pass


def _quality(text):
    try:
        q = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"quality must be an integer, got {text!r}") from None
    if not 1 <= q <= 100:
        raise argparse.ArgumentTypeError(f"quality must be in [1, 100], got {q}")
    return q


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value experiment file")
    common.add_argument("--seed", type=int, metavar="N", help="random seed for training")
    common.add_argument("--desk-scale", action="store_true", default=None,
                        help="256x256 holograms of 128x128 objects, 3 training and 1 test object")
    common.add_argument("--out", metavar="DIR", help="run directory")
    common.add_argument("--workers", type=int, metavar="N", help="processes for per-hologram work")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="holojpeg", description="JPEG + CNN phase-only hologram compression")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    g = sub.add_parser("generate", parents=[common], help="synthesize phase-only holograms")
    g.add_argument("--object", action="append", metavar="NAME|PGM",
                   help="object image (repeatable); replaces the configured objects")
    g.add_argument("--distance", type=_positive, action="append", metavar="M")

    c = sub.add_parser("compress", parents=[common], help="JPEG-compress quantized phase maps")
    c.add_argument("--quality", type=_quality, metavar="Q")
    c.add_argument("--input", metavar="PGM")
    c.add_argument("--output", metavar="JPG")
    c.add_argument("--distance", type=_positive, action="append", metavar="M")

    t = sub.add_parser("train", parents=[common], help="train one restoration network per distance")
    t.add_argument("--distance", type=_positive, action="append", metavar="M")
    t.add_argument("--iterations", type=int, metavar="N")

    r = sub.add_parser("restore", parents=[common], help="run the network over compressed phase maps")
    r.add_argument("--model", metavar="ARCN")
    r.add_argument("--input", metavar="JPG|PGM")
    r.add_argument("--output", metavar="PGM")
    r.add_argument("--distance", type=_positive, action="append", metavar="M")

    rc = sub.add_parser("reconstruct", parents=[common], help="numerically replay holograms")
    rc.add_argument("--input", metavar="PGM|JPG|CGHP|CGHF")
    rc.add_argument("--output", metavar="PGM")
    rc.add_argument("--distance", type=_positive, action="append", metavar="M")
    rc.add_argument("--crop", type=int, metavar="N", help="side of the central crop (default: object size)")

    sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM report against uncompressed replays")
    pl = sub.add_parser("pipeline", parents=[common], help="run every stage")
    pl.add_argument("--iterations", type=int, metavar="N")
    return p


def _config(args):
    overrides = {"seed": args.seed, "desk_scale": args.desk_scale, "out": args.out, "workers": args.workers}
    if getattr(args, "quality", None) is not None:
        overrides["quality"] = args.quality
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    if getattr(args, "object", None):
        overrides["train_objects"] = tuple(args.object)
        overrides["test_objects"] = ()
    return load_config(args.config, **overrides)


def _distances(args, cfg):
    chosen = getattr(args, "distance", None)
    return list(chosen) if chosen else list(cfg.distances)


def _stage_index(cfg, d):
    for i, x in enumerate(cfg.distances):
        if abs(x - d) < 1e-9:
            return i
    return len(cfg.distances)


def _read_gray(path):
    path = Path(path)
    if path.suffix.lower() in (".jpg", ".jpeg"):
        return decode(JfifStream.load(path))
    return load_pgm(path)


def cmd_generate(args):
    cfg = _config(args)
    if args.distance:
        cfg = cfg.replace(distances=tuple(args.distance))
    run = Run(cfg)
    run.ingest()
    for d in cfg.distances:
        run.generate(d)
    run.save_manifest()
    print(f"holograms written under {run.root}")


def cmd_compress(args):
    if args.input:
        if not args.output:
            raise UsageError("--input needs --output")
        q = args.quality if args.quality is not None else _config(args).quality
        try:
            g = load_pgm(args.input)
            s = encode(g, q)
            s.save(args.output)
        except (OSError, FormatError) as exc:
            raise StageError("compress", str(exc)) from None
        print(f"{args.output}: {g.size} -> {len(s)} bytes, ratio {g.size / len(s):.4f}")
        return
    cfg = _config(args)
    run = Run(cfg)
    for d in _distances(args, cfg):
        run.compress(d)
        print((run.zdir(d) / "compression.csv").read_text(), end="")
    run.save_manifest()


def cmd_train(args):
    cfg = _config(args)
    run = Run(cfg)
    for d in _distances(args, cfg):
        run.train(d, _stage_index(cfg, d))
        print(f"model written to {run.model_path(d)}")
    run.save_manifest()


def cmd_restore(args):
    if args.input or args.model:
        if not (args.input and args.model and args.output):
            raise UsageError("file mode needs --model, --input and --output")
        try:
            model = arcnn.load_model(args.model)
            d = args.distance[0] if args.distance else None
            out = arcnn.restore(model, _read_gray(args.input), d, wrap=_config(args).wrap_output)
            save_pgm(out, args.output)
        except (OSError, FormatError) as exc:
            raise StageError("restore", str(exc)) from None
        print(f"restored image written to {args.output}")
        return
    cfg = _config(args)
    run = Run(cfg)
    for d in _distances(args, cfg):
        run.restore(d)
    run.save_manifest()
    print(f"restored holograms written under {run.root}")


def cmd_reconstruct(args):
    cfg = _config(args)
    if args.input:
        if not args.output:
            raise UsageError("--input needs --output")
        d = args.distance[0] if args.distance else cfg.distances[0]
        optics = OpticalConfig(cfg.wavelength, cfg.pitch, d)
        try:
            path = Path(args.input)
            suffix = path.suffix.lower()
            if suffix == ".cghf":
                src = load_field(path)
            elif suffix == ".cghp":
                src = load_phase(path)
            else:
                src = dequantize_phase(_read_gray(path), cfg.pitch)
            n = args.crop or min(cfg.object_size, *src.shape)
            save_pgm(reconstruct(src, optics, (n, n)), args.output)
        except (OSError, FormatError, ValueError) as exc:
            raise StageError("reconstruct", str(exc)) from None
        print(f"reconstruction written to {args.output}")
        return
    run = Run(cfg)
    for d in _distances(args, cfg):
        run.reconstruct(d)
    run.save_manifest()
    print(f"reconstructions written under {run.root}")


def _print_report(path):
    rows = read_report(path)
    print(f"{'object':<12} {'z':>5} {'ratio':>7} {'PSNR c':>7} {'SSIM c':>7} {'PSNR r':>7} {'SSIM r':>7}")
    for row in rows:
        print(f"{row['object']:<12} {row['distance']:>5g} {row['ratio']:>7.3f} "
              f"{row['psnr_compressed']:>7.2f} {row['ssim_compressed']:>7.4f} "
              f"{row['psnr_restored']:>7.2f} {row['ssim_restored']:>7.4f}")


def cmd_evaluate(args):
    run = Run(_config(args))
    run.evaluate()
    run.save_manifest()
    _print_report(run.root / "report.csv")


def cmd_pipeline(args):
    run = Run(_config(args))
    report = run.pipeline()
    _print_report(report)
    if run.skipped:
        print(f"cached stages: {', '.join(run.skipped)}")


COMMANDS = {
    "generate": cmd_generate,
    "compress": cmd_compress,
    "train": cmd_train,
    "restore": cmd_restore,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"holojpeg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"holojpeg {args.command}: stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
