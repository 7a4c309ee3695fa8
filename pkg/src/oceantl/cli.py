"""Command line entry point.

    oceantl generate               --config cfg.json
    oceantl solve    BATHY_CSV     --config cfg.json
    oceantl train    [DATASET_DIR] --config cfg.json
    oceantl evaluate [CHECKPOINT] [DATASET_DIR] --config cfg.json
    oceantl predict  CHECKPOINT BATHY_CSV --config cfg.json [--task N]

Common flags: ``--seed N`` overrides the dataset seed, ``--grid WxH``
overrides the receiver grid dimensions (W range cells, H depth cells),
``--out DIR`` overrides the output directory.  ``OCEANTL_THREADS`` caps
worker parallelism (generation only) and is applied to the numeric
libraries before they load.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O or
file-format error.
"""

from __future__ import annotations

import os

# Thread caps must land before numpy initializes its thread pools.
_threads = os.environ.get("OCEANTL_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import json
import sys

from .config import PipelineConfig, load_config
from .errors import (
    ConfigError,
    FormatError,
    GeometryError,
    NumericsError,
    RayTraceError,
    ShapeError,
)
from . import pipeline

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oceantl",
        description="Transmission loss dataset generation, training, and inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the dataset seed")
        p.add_argument("--grid", default=None, metavar="WxH",
                       help="override grid dims (range x depth cells)")
        p.add_argument("--out", default=None, help="override the output directory")

    p = sub.add_parser("generate", help="solve the configured scenario datasets")
    add_common(p)

    p = sub.add_parser("solve", help="oracle-solve one bathymetry CSV")
    p.add_argument("bathy_csv", help="bathymetry profile CSV (range_m,depth_m)")
    add_common(p)

    p = sub.add_parser("train", help="train the task sequence on a dataset")
    p.add_argument("dataset_dir", nargs="?", default=None,
                   help="dataset directory (default: <out>/dataset)")
    add_common(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on held-out samples")
    p.add_argument("checkpoint", nargs="?", default=None,
                   help="checkpoint file (default: <out>/train/final.tlf)")
    p.add_argument("dataset_dir", nargs="?", default=None,
                   help="dataset directory (default: <out>/dataset)")
    add_common(p)

    p = sub.add_parser("predict", help="model-predict one bathymetry CSV")
    p.add_argument("checkpoint", help="checkpoint file")
    p.add_argument("bathy_csv", help="bathymetry profile CSV (range_m,depth_m)")
    p.add_argument("--task", type=int, default=None,
                   help="normalization stats to use (default: lowest stored task)")
    add_common(p)

    return parser


def _apply_overrides(doc: dict, args) -> dict:
    if args.seed is not None:
        doc.setdefault("dataset", {})["seed"] = args.seed
    if args.grid is not None:
        try:
            w, h = (int(part) for part in args.grid.lower().split("x"))
        except ValueError:
            raise ConfigError(
                f"--grid wants WxH (e.g. 176x256), got '{args.grid}'"
            ) from None
        doc.setdefault("grid", {})
        doc["grid"]["n_range"] = w
        doc["grid"]["n_depth"] = h
    if args.out is not None:
        doc["output_dir"] = args.out
    return doc


def _load(args) -> PipelineConfig:
    doc = load_config(args.config).to_dict()
    return PipelineConfig.from_dict(_apply_overrides(doc, args))


def _echo(message: str) -> None:
    print(message)


def _dispatch(args) -> int:
    config = _load(args)
    if args.command == "generate":
        pipeline.generate_dataset(config, echo=_echo)
    elif args.command == "solve":
        pipeline.solve_field(config, args.bathy_csv, echo=_echo)
    elif args.command == "train":
        pipeline.train_model(config, args.dataset_dir, echo=_echo)
    elif args.command == "evaluate":
        report = pipeline.evaluate_checkpoint(
            config, args.checkpoint, args.dataset_dir, echo=_echo)
        print(json.dumps({"mean_test_ssim": report["mean_test_ssim"]}))
    elif args.command == "predict":
        pipeline.predict_field(config, args.checkpoint, args.bathy_csv,
                               task_id=args.task, echo=_echo)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, GeometryError, ShapeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericsError, RayTraceError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
