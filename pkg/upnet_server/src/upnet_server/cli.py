"""Command line front end: train a model, then serve it.

    upnet-server train --manifest data/manifest.txt --out model.pt
    upnet-server serve --checkpoint model.pt
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .dataio import DataError
from .server import serve
from .training import TrainSpec, train


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="upnet-server",
        description="train and serve the learned uncertainty predictor",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="fit the regressor on a dataset manifest")
    tr.add_argument("--manifest", required=True, help="path to manifest.txt")
    tr.add_argument("--out", required=True, help="checkpoint file to write")
    tr.add_argument("--kind", default="psnr", help="uncertainty kind to learn")
    tr.add_argument("--epochs", type=int, default=200)
    tr.add_argument("--learning-rate", type=float, default=1e-4)
    tr.add_argument("--batch-size", type=int, default=32)
    tr.add_argument("--seed", type=int, default=0)

    sv = sub.add_parser("serve", help="answer predictions on stdin/stdout")
    sv.add_argument("--checkpoint", required=True, help="trained model file")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "train":
        try:
            spec = TrainSpec(
                manifest=Path(args.manifest),
                checkpoint=Path(args.out),
                kind=args.kind,
                epochs=args.epochs,
                learning_rate=args.learning_rate,
                batch_size=args.batch_size,
                seed=args.seed,
            )
            result = train(spec, log=lambda msg: print(msg, file=sys.stderr))
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(
            f"trained {args.epochs} epochs: mse {result.first_loss:.6f} -> "
            f"{result.final_loss:.6f}; holdout {result.holdout_mse:.6f} vs "
            f"constant-mean {result.baseline_mse:.6f}"
        )
        print(f"checkpoint {result.checkpoint}")
        print(f"loss curve {result.curve_path}")
        return 0
    if args.command == "serve":
        return serve(args.checkpoint)
    raise AssertionError(args.command)


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
