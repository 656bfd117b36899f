"""Batch command-line front end: corrupt, dataset-build, train, restore, eval, gradcheck."""

from __future__ import annotations

import argparse
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
import logging
from pathlib import Path
import sys
from typing import Any, NoReturn

from atomicwrites import atomic_write
import orjson

from .config import load_config_file, resolve_config
from .const import (
    CORRUPTION_KINDS,
    DEFAULT_SPLIT_RATIO,
    EXIT_DATA,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    IMAGE_SUFFIXES,
    LINES_FRACTIONS,
    PROFILE_DESK,
    SPLIT_VAL,
)
from .corruption import CorruptionParams, corrupt, sample_spec
from .dataset import SPLITS, Manifest, build_dataset
from .evaluation import evaluate, write_report
from .exceptions import ConfigError, DataError, NumericalError, ShapeError
from .gradcheck import SUITES, run_suites
from .helpers import stable_hash64
from .imaging import load_image, save_image
from .restore import RestorationFilter
from .training import train

_LOGGER = logging.getLogger(__name__)

CORRUPTIONS_LOG = "corruptions.jsonl"
KIND_CHOICES = [
    *CORRUPTION_KINDS,
    *(f"horizontal-lines-{f:g}" for f in LINES_FRACTIONS),
]


class CrtArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str) -> NoReturn:
        """Print usage and exit with the usage exit code."""
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(value: str) -> int:
    try:
        seed = int(value, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {value!r}") from None
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError(f"seed {value} does not fit in 64 bits")
    return seed


def _kinds(value: str) -> list[str]:
    kinds = [k.strip() for k in value.split(",") if k.strip()]
    if not kinds:
        raise argparse.ArgumentTypeError("at least one kind is required")
    return kinds


def _add_corruption_overrides(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("corruption parameters")
    for flag, kind in (
        ("square-fraction", float),
        ("noise-sigma", float),
        ("lines-fraction", float),
        ("lines-thickness", int),
        ("drops-count-min", int),
        ("drops-count-max", int),
        ("drops-radius-min", float),
        ("drops-radius-max", float),
        ("drops-alpha", float),
    ):
        group.add_argument(f"--{flag}", type=kind, default=None)


def build_parser() -> CrtArgumentParser:
    """Return the command-line parser."""
    parser = CrtArgumentParser(prog="crt-restore", description=__doc__)
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="root logger level",
    )
    sub = parser.add_subparsers(
        dest="command", required=True, parser_class=CrtArgumentParser
    )

    p = sub.add_parser("corrupt", help="apply one corruption to an image or directory")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--kind", choices=KIND_CHOICES, required=True)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--workers", type=int, default=None)
    _add_corruption_overrides(p)

    p = sub.add_parser("dataset-build", help="build a paired dataset from clean frames")
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--kinds", type=_kinds, default=list(CORRUPTION_KINDS))
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--split", type=float, default=DEFAULT_SPLIT_RATIO)
    p.add_argument("--name", default=None)
    p.add_argument("--workers", type=int, default=None)
    _add_corruption_overrides(p)

    p = sub.add_parser("train", help="train generator and discriminator")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--profile", default=None)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--seed", type=_seed, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)

    p = sub.add_parser("restore", help="restore images with a trained generator")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=8)

    p = sub.add_parser("eval", help="report PSNR / SSIM per corruption kind")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--split", choices=SPLITS, default=SPLIT_VAL)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=8)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suites")
    p.add_argument("--suite", action="append", choices=sorted(SUITES), default=None)
    p.add_argument("--seed", type=_seed, default=0)
    return parser


def _log_resolved(command: str, resolved: dict[str, Any]) -> None:
    payload = orjson.dumps(
        {"command": command, **resolved}, option=orjson.OPT_SORT_KEYS, default=str
    )
    _LOGGER.info("Resolved config: %s", payload.decode())


def _corruption_params(args: argparse.Namespace) -> CorruptionParams:
    overrides = {
        key: getattr(args, key)
        for key in asdict(CorruptionParams())
        if getattr(args, key, None) is not None
    }
    return CorruptionParams(**overrides)


def _image_inputs(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        files = sorted(
            p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        if files:
            return files
        raise DataError(f"{path}: no PNG images found")
    raise DataError(f"{path}: no such file or directory")


def _cmd_corrupt(args: argparse.Namespace) -> int:
    params = _corruption_params(args)
    _log_resolved(
        "corrupt",
        {
            "in": args.inp,
            "out": args.out,
            "kind": args.kind,
            "seed": args.seed,
            "params": asdict(params),
        },
    )
    inputs = _image_inputs(args.inp)
    single = args.inp.is_file()

    def _one(path: Path) -> dict[str, Any]:
        image = load_image(path)
        seed = args.seed if single else stable_hash64(args.seed, path.name)
        spec = sample_spec(args.kind, seed, image.shape[:2], params)
        save_image(corrupt(image, spec), args.out / path.name)
        return {"file": path.name, "spec": spec.to_record()}

    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        records = list(pool.map(_one, inputs))
    args.out.mkdir(parents=True, exist_ok=True)
    with atomic_write(args.out / CORRUPTIONS_LOG, mode="wb", overwrite=True) as fdesc:
        for record in records:
            fdesc.write(orjson.dumps(record, option=orjson.OPT_SORT_KEYS) + b"\n")
    _LOGGER.info("Corrupted %d image(s) into %s", len(records), args.out)
    return EXIT_OK


def _cmd_dataset_build(args: argparse.Namespace) -> int:
    params = _corruption_params(args)
    _log_resolved(
        "dataset-build",
        {
            "frames": args.frames,
            "out": args.out,
            "kinds": args.kinds,
            "seed": args.seed,
            "split": args.split,
            "name": args.name,
            "params": asdict(params),
        },
    )
    build_dataset(
        args.frames,
        args.out,
        args.kinds,
        args.seed,
        args.split,
        params=params,
        name=args.name,
        workers=args.workers,
    )
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    if args.config is not None:
        run_config = load_config_file(args.config, args.profile)
    else:
        run_config = resolve_config(args.profile or PROFILE_DESK)
    train_overrides = {
        key: value
        for key, value in (
            ("seed", args.seed),
            ("epochs", args.epochs),
            ("max_steps", args.max_steps),
        )
        if value is not None
    }
    if train_overrides:
        run_config = replace(run_config, train=replace(run_config.train, **train_overrides))
    _log_resolved("train", {"dataset": args.dataset, "out": args.out, **run_config.as_dict()})
    manifest = Manifest.load(args.dataset)
    result = train(manifest, run_config.model, run_config.train, run_config.loss, args.out)
    _LOGGER.info(
        "Training finished: last %s, best %s", result.last_checkpoint, result.best_checkpoint
    )
    return EXIT_OK


def _cmd_restore(args: argparse.Namespace) -> int:
    restorer = RestorationFilter(args.ckpt, batch_size=args.batch_size)
    _log_resolved(
        "restore",
        {
            "ckpt": args.ckpt,
            "in": args.inp,
            "out": args.out,
            "batch_size": args.batch_size,
            "model": restorer.config.as_dict(),
        },
    )
    inputs = _image_inputs(args.inp)
    with ThreadPoolExecutor() as pool:
        frames = list(pool.map(load_image, inputs))
        restored = restorer.restore_many(frames)
        list(
            pool.map(
                lambda item: save_image(item[1], args.out / item[0].name),
                zip(inputs, restored, strict=True),
            )
        )
    _LOGGER.info("Restored %d image(s) into %s", len(inputs), args.out)
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    _log_resolved(
        "eval",
        {
            "ckpt": args.ckpt,
            "dataset": args.dataset,
            "split": args.split,
            "report": args.report,
            "batch_size": args.batch_size,
        },
    )
    manifest = Manifest.load(args.dataset)
    report = evaluate(args.ckpt, manifest, args.split, batch_size=args.batch_size)
    write_report(report, args.report)
    return EXIT_OK


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    suites = args.suite or list(SUITES)
    _log_resolved("gradcheck", {"suites": suites, "seed": args.seed})
    results = run_suites(suites, args.seed)
    failed = [r for r in results if not r.passed]
    if failed:
        raise NumericalError(
            f"{len(failed)} of {len(results)} gradient checks failed",
            {r.name: r.describe() for r in failed},
        )
    _LOGGER.info("All %d gradient checks passed", len(results))
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "corrupt": _cmd_corrupt,
    "dataset-build": _cmd_dataset_build,
    "train": _cmd_train,
    "restore": _cmd_restore,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Parse argv, run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code) if isinstance(err.code, int) else EXIT_USAGE

    logging.basicConfig(format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(args.log_level)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        _LOGGER.error("Configuration error: %s", err)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError) as err:
        _LOGGER.error("Data error: %s", err)
        return EXIT_DATA
    except NumericalError as err:
        _LOGGER.error("Numerical failure: %s", err)
        for key, value in err.details.items():
            _LOGGER.error("  %s: %s", key, value)
        return EXIT_NUMERICAL


def main() -> NoReturn:
    """Console-script entry point."""
    sys.exit(run(sys.argv[1:]))
