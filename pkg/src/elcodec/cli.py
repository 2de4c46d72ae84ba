"""Command-line entry point: pretrain, encode, decode, bdrate, report.

Exit codes: 0 ok, 2 bad configuration, 3 I/O or ingest problem,
4 numeric failure, 5 bitstream decode failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .baselayer import CTC_QPS
from .errors import ConfigError, DecodeError, IngestError, NumericError
from .network import TrainingConfig
from .pipeline import (
    OUTPUT_DIR_ENV,
    ManifestMismatch,
    PretrainConfig,
    RunConfig,
    bd_rate_from_summary,
    emit_reports,
    pretrain_initial,
    run_decode,
    run_encode,
)

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_DECODE = 2, 3, 4, 5


def _qps(text: str) -> tuple:
    try:
        return tuple(int(q) for q in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad QP list {text!r}") from None


def _training(args) -> TrainingConfig:
    base = TrainingConfig.full() if args.profile == "full" else TrainingConfig.desk()
    over = {k: v for k, v in (("iters_per_epoch", args.iters), ("max_epochs", args.epochs), ("batch_size", args.batch), ("learning_rate", args.lr)) if v is not None}
    return TrainingConfig(**{**base.to_dict(), **over})


def _cmd_pretrain(args) -> int:
    cfg = PretrainConfig(iterations=args.iterations, batch_size=args.batch, learning_rate=args.lr, seed=args.seed)

    def progress(it, loss):
        if it % 100 == 0:
            logging.info("iteration %d loss %.6g", it, loss)

    _, stats = pretrain_initial(args.corpus, cfg, args.out, progress=progress)
    print(json.dumps(stats, indent=2))
    return 0


def _cmd_encode(args) -> int:
    synthetic = None
    if args.synthetic:
        frames, h, w = (int(v) for v in args.synthetic.split("x"))
        synthetic = {"kind": "textured", "seed": args.seed, "frames": frames, "height": h, "width": w}
    out = args.output_dir or os.environ.get(OUTPUT_DIR_ENV)
    if not out:
        raise ConfigError(f"no output directory: pass --output-dir or set {OUTPUT_DIR_ENV}")
    cfg = RunConfig(
        output_dir=out,
        mode=args.mode,
        original=args.original,
        recon=args.recon,
        rate_log=args.rate_log,
        width=args.width,
        height=args.height,
        synthetic=synthetic,
        qps=args.qps,
        group_size=args.group_size,
        training=_training(args),
        initial_model=args.initial_model,
        seed=args.seed,
        allow_no_el=not args.force_el,
        max_frames=args.max_frames,
    )
    result = run_encode(cfg)
    for row in result.summary:
        print(f"QP {row['qp']}: BL {row['bl_bits']} bits {row['psnr_bl']:.3f} dB, "
              f"BL+EL {row['total_bits']} bits {row['psnr_out']:.3f} dB, EL in {row['el_groups']} group(s)")
    print(f"run written to {result.output_dir}")
    return 0


def _cmd_decode(args) -> int:
    res = run_decode(args.run_dir, args.out, args.initial_model)
    for qp, vals in res.psnr.items():
        print(f"QP {qp}: mean PSNR {sum(vals) / len(vals):.3f} dB over {len(vals)} frames")
    for e in res.errors:
        print(f"EL error, base layer passed through: {e}", file=sys.stderr)
    if not res.digests_match:
        print("decoded frames differ from the encoder's reconstruction", file=sys.stderr)
        return EXIT_DECODE
    return 0


def _cmd_bdrate(args) -> int:
    print(f"BD-rate {bd_rate_from_summary(args.summary):.4f} %")
    return 0


def _cmd_report(args) -> int:
    print(f"reports written to {emit_reports(args.run_dir)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elcodec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="train the shared initial model on an image corpus")
    s.add_argument("corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--iterations", type=int, default=2000)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_pretrain)

    s = sub.add_parser("encode", help="base layer, online training and EL selection")
    s.add_argument("--mode", choices=("toy-bl", "ingest"), default="toy-bl")
    s.add_argument("--original", help="planar 4:2:0 8-bit source")
    s.add_argument("--synthetic", metavar="NxHxW", help="textured synthetic clip instead of a file")
    s.add_argument("--recon", help="external reconstruction (ingest mode)")
    s.add_argument("--rate-log", help="per-frame bits CSV (ingest mode)")
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--qps", type=_qps, default=CTC_QPS)
    s.add_argument("--group-size", type=int, default=8)
    s.add_argument("--max-frames", type=int)
    s.add_argument("--profile", choices=("desk", "full"), default="desk")
    s.add_argument("--iters", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--initial-model")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--force-el", action="store_true", help="never fall back to sending no EL")
    s.add_argument("--output-dir")
    s.set_defaults(func=_cmd_encode)

    s = sub.add_parser("decode", help="rebuild enhanced frames from a run directory")
    s.add_argument("run_dir")
    s.add_argument("--out")
    s.add_argument("--initial-model")
    s.set_defaults(func=_cmd_decode)

    s = sub.add_parser("bdrate", help="BD-rate of BL+EL against the BL from a summary.csv")
    s.add_argument("summary")
    s.set_defaults(func=_cmd_bdrate)

    s = sub.add_parser("report", help="write CSV tables and SVG plots for a run")
    s.add_argument("run_dir")
    s.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ManifestMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DecodeError as exc:
        print(f"decode error: {exc}", file=sys.stderr)
        return EXIT_DECODE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
