"""Command line."""

from __future__ import annotations

from argparse import ArgumentParser as BaseArgumentParser
from argparse import Namespace
from collections.abc import Callable, Mapping, Sequence
from contextlib import contextmanager
from json import dumps
from logging import getLogger
from pathlib import Path

from pandas import concat

from .bench import BenchSetup, bench_compare, reference_rows, summarize
from .checkpoint import load_checkpoint
from .config import RunConfig, write_metadata
from .corpus import Corpus, synth_corpus
from .distill import DistillConfig
from .evaluate import attribution, evaluate
from .gradcheck import run_suite
from .image import save_gray_png, to_tensor
from .ops import is_strict, set_strict
from .train import TrainConfig, distill, model_from_checkpoint, train_teacher
from .utils import ConfigError, SrdkError, configure_logger

logger = getLogger(__name__)

ON = dumps({"key": "%s.on"})
END = dumps({"key": "%s.end"})
RUN = dumps({"key": "run", "command": "%s", "run_dir": "%s"})
FOOTPRINT = dumps(
    {
        "key": "attribution.footprint",
        "checkpoint": "%s",
        "area": "%s",
        "path": "%s",
    }
)

OP_TOLERANCE = 1e-5
CHAIN_TOLERANCE = 1e-4

DISTILL = DistillConfig()
TRAIN = TrainConfig()

# flag dest -> config key; "train.*" keys follow the command's train section
OVERRIDES = {
    "alpha1": "distill.alpha1",
    "alpha2": "distill.alpha2",
    "batch_size": "train.batch_size",
    "cache": "cache",
    "corpus": "corpus",
    "depth": "distill.regressor_depth",
    "epochs": "train.epochs",
    "fft_mode": "distill.fft_mode",
    "fft_weight": "distill.fft_weight",
    "halve_at_epoch": "train.halve_at_epoch",
    "lr": "train.lr",
    "method": "distill.method",
    "methods": "methods",
    "on_y": "on_y",
    "out": "out",
    "patch_size": "train.patch_size",
    "scale": "scale",
    "seeds": "seeds",
    "sfd_flow": "distill.sfd_flow",
    "slope": "distill.regressor_slope",
    "splits": "splits",
    "steps_per_epoch": "train.steps_per_epoch",
    "teacher_ckpt": "teacher_ckpt",
    "use_fft": "distill.use_fft",
    "workers": "workers",
}


class ArgumentParser(BaseArgumentParser):
    """Raise ConfigError instead of exiting on bad arguments."""

    def error(self, message: str):
        """Error."""
        raise ConfigError(message, "argv")


def int_list(value: str) -> list[int]:
    """Parse 1,2,3."""
    try:
        return [int(each) for each in value.split(",") if each]
    except ValueError as e:
        raise ConfigError(f"Not a list of ints: {value}", "seeds") from e


def str_list(value: str) -> list[str]:
    """Parse a,b,c."""
    return [each for each in value.split(",") if each]


def region(value: str) -> tuple[int, int, int, int]:
    """Parse x,y,w,h."""
    parts = int_list(value)
    if len(parts) != 4:
        raise ConfigError(f"Region must be x,y,w,h: {value}", "region")
    x, y, w, h = parts
    return x, y, w, h


def _shared(parser: ArgumentParser) -> None:
    """Flags every subcommand accepts; unset flags keep config values."""
    parser.add_argument("-c", "--config", help="json or yaml run config")
    parser.add_argument(
        "-e", "--env", help="env file of ${VAR} values used by --config"
    )
    parser.add_argument("--out", help="output root (default: runs)")
    parser.add_argument("--corpus", help="corpus manifest.json")
    parser.add_argument("--cache", help="LR image cache directory")
    parser.add_argument(
        "--scale", type=int, help="upscaling factor 2, 3 or 4 (default: 2)"
    )
    parser.add_argument(
        "--seeds", type=int_list, help="comma separated seeds (default: 0)"
    )
    parser.add_argument(
        "--splits",
        type=str_list,
        help="comma separated splits to score (default: val,test)",
    )
    parser.add_argument(
        "--rgb",
        dest="on_y",
        action="store_const",
        const=False,
        help="score PSNR on RGB instead of Y (default: Y)",
    )
    parser.add_argument(
        "--strict",
        action="store_true",
        help="single-threaded unoptimized contractions",
    )


def _distill(parser: ArgumentParser) -> None:
    parser.add_argument(
        "--teacher-ckpt", help="teacher checkpoint from train-teacher"
    )
    parser.add_argument(
        "--method",
        help=f"vanilla, kd, fitnet, lfd or lsfd (default: {DISTILL.method})",
    )
    parser.add_argument(
        "--alpha1",
        type=float,
        help=f"LFD weight (default: {DISTILL.alpha1:g})",
    )
    parser.add_argument(
        "--alpha2",
        type=float,
        help=f"LSFD weight (default: {DISTILL.alpha2:g})",
    )
    parser.add_argument(
        "--slope",
        type=float,
        help=(
            "regressor leaky relu slope "
            f"(default: {DISTILL.regressor_slope:g})"
        ),
    )
    parser.add_argument(
        "--depth",
        type=int,
        help=f"deep regressor layers (default: {DISTILL.regressor_depth})",
    )
    parser.add_argument(
        "--use-fft",
        action="store_const",
        const=True,
        help="add the frequency loss (default: off)",
    )
    parser.add_argument(
        "--fft-weight",
        type=float,
        help=f"frequency loss weight (default: {DISTILL.fft_weight:g})",
    )
    parser.add_argument(
        "--fft-mode",
        help=f"split or magnitude (default: {DISTILL.fft_mode})",
    )
    parser.add_argument(
        "--sfd-flow",
        action="store_const",
        const=True,
        help="let gradients flow through the SFD map (default: off)",
    )


def _train(parser: ArgumentParser) -> None:
    parser.add_argument(
        "--epochs", type=int, help=f"epochs (default: {TRAIN.epochs})"
    )
    parser.add_argument(
        "--halve-at-epoch",
        type=int,
        help=f"halve lr from this epoch (default: {TRAIN.halve_at_epoch})",
    )
    parser.add_argument(
        "--steps-per-epoch",
        type=int,
        help=f"steps per epoch (default: {TRAIN.steps_per_epoch})",
    )
    parser.add_argument(
        "--lr", type=float, help=f"learning rate (default: {TRAIN.lr:g})"
    )
    parser.add_argument(
        "--batch-size",
        type=int,
        help=f"patches per batch (default: {TRAIN.batch_size})",
    )
    parser.add_argument(
        "--patch-size",
        type=int,
        help=f"LR patch size (default: {TRAIN.patch_size})",
    )


def _checkpoint(parser: ArgumentParser) -> None:
    parser.add_argument("--ckpt", help="model checkpoint")


def _bench(parser: ArgumentParser) -> None:
    parser.add_argument(
        "--methods",
        type=str_list,
        help="comma separated methods (default: vanilla,fitnet,lfd,lsfd)",
    )
    parser.add_argument(
        "--workers",
        type=int,
        help="worker processes for cells (default: 1)",
    )


def _attribution(parser: ArgumentParser) -> None:
    _checkpoint(parser)
    parser.add_argument("--ckpt-b", help="second model checkpoint")
    parser.add_argument(
        "--split", default="val", help="corpus split (default: val)"
    )
    parser.add_argument(
        "--region",
        type=region,
        default=(0, 0, 8, 8),
        help="SR region x,y,w,h (default: 0,0,8,8)",
    )
    parser.add_argument(
        "--image-id", help="image id (default: first of the split)"
    )


def build_parser() -> ArgumentParser:
    """Return the srdk argument parser."""
    parser = ArgumentParser(
        prog="srdk",
        description="Feature distillation for single-image super-resolution",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, summary, extras in (
        ("synth-data", "write a synthetic texture corpus", ()),
        ("train-teacher", "train a teacher with L1", (_train,)),
        ("distill", "train a student", (_distill, _train)),
        ("eval", "score a checkpoint", (_checkpoint,)),
        ("gradcheck", "finite-difference gradient suite", ()),
        ("bench", "methods x seeds sweep", (_distill, _train, _bench)),
        ("attribution", "input-gradient maps", (_attribution,)),
    ):
        sub = commands.add_parser(name, help=summary, description=summary)
        _shared(sub)
        for each in extras:
            each(sub)
    return parser


def resolve(
    args: Namespace,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Parse --config and --env, apply flag overrides and validate."""
    if args.config is None:
        if args.env is not None:
            raise ConfigError("--env needs --config", "env")
        config = RunConfig()
    else:
        config = RunConfig.load(args.config, args.env, env)
    section = "teacher_train" if args.command == "train-teacher" else "train"
    for dest, key in OVERRIDES.items():
        if key.startswith("train."):
            key = section + key[len("train") :]
        config.override(key, getattr(args, dest, None))
    config.validate()
    return config


def seeded(config: RunConfig, seed: int) -> RunConfig:
    """Return a copy with every seed set."""
    result = RunConfig.from_mapping(config.as_yaml())
    for key in ("teacher", "student", "teacher_train", "train", "distill"):
        getattr(result, key).seed = seed
    return result


def _corpus(config: RunConfig) -> Corpus:
    if config.corpus is None:
        raise ConfigError("--corpus is required", "corpus")
    if not Path(config.corpus).is_file():
        raise ConfigError(f"--corpus {config.corpus} not found", "corpus")
    return Corpus.load(config.corpus, scale=config.scale, cache=config.cache)


def _require(path: str | None, flag: str, key: str) -> Path:
    if path is None:
        raise ConfigError(f"{flag} is required", key)
    if not Path(path).is_file():
        raise ConfigError(f"{flag} {path} not found", key)
    return Path(path)


def synth_data(args: Namespace, config: RunConfig, run_dir: Path) -> None:
    """Write a synthetic corpus to --corpus or the run directory."""
    del args
    out = run_dir
    if config.corpus is not None:
        if Path(config.corpus).name != "manifest.json":
            raise ConfigError("--corpus must name a manifest.json", "corpus")
        out = Path(config.corpus).parent
    manifest = synth_corpus(config.synth, out)
    write_metadata(
        run_dir,
        "synth-data",
        config,
        corpus=str(out / "manifest.json"),
        entries=len(manifest.entries),
    )


def teacher(args: Namespace, config: RunConfig, run_dir: Path) -> None:
    """Train the teacher."""
    del args
    corpus = _corpus(config)
    run = seeded(config, config.seeds[0])
    result = train_teacher(
        run.teacher,
        run.teacher_train,
        corpus,
        run_dir=run_dir,
        on_y=config.on_y,
    )
    write_metadata(
        run_dir,
        "train-teacher",
        config,
        best_val_psnr=result.best_val_psnr,
        bicubic_psnr=result.bicubic_psnr,
        checkpoint=str(run_dir / "model.ckpt"),
        parameters=result.checkpoint.deployable_parameter_count,
        taps=run.teacher.tap_points(),
    )


def student(args: Namespace, config: RunConfig, run_dir: Path) -> None:
    """Distill a student from the teacher checkpoint."""
    del args
    path = _require(config.teacher_ckpt, "--teacher-ckpt", "teacher_ckpt")
    corpus = _corpus(config)
    run = seeded(config, config.seeds[0])
    result = distill(
        load_checkpoint(path),
        run.student,
        run.distill,
        run.train,
        corpus,
        run_dir=run_dir,
        on_y=config.on_y,
    )
    plan = result.checkpoint.extra.get("plan", {})
    write_metadata(
        run_dir,
        "distill",
        config,
        best_val_psnr=result.best_val_psnr,
        bicubic_psnr=result.bicubic_psnr,
        checkpoint=str(run_dir / "model.ckpt"),
        parameters=result.checkpoint.deployable_parameter_count,
        regressor_parameters=result.checkpoint.regressor_parameter_count,
        taps=plan.get("taps"),
    )


def score(args: Namespace, config: RunConfig, run_dir: Path) -> None:
    """Score a checkpoint on every configured split."""
    path = _require(args.ckpt, "--ckpt", "ckpt")
    corpus = _corpus(config)
    model = model_from_checkpoint(load_checkpoint(path))
    reports = [
        evaluate(
            model,
            corpus.split(split),
            config.scale,
            corpus.mean_rgb,
            on_y=config.on_y,
            method=path.stem,
            split=split,
        )
        for split in config.splits
        if corpus.split(split)
    ]
    if not reports:
        raise ConfigError(f"No images in {config.splits}", "splits")
    concat([each.frame() for each in reports]).to_csv(
        run_dir / "report.csv", index=False
    )
    write_metadata(
        run_dir,
        "eval",
        config,
        checkpoint=str(path),
        psnr_db={each.split: each.aggregate for each in reports},
    )


def gradcheck(args: Namespace, config: RunConfig, run_dir: Path) -> None:
    """Print the max relative error of every op and the full chain."""
    del args
    errors = run_suite(config.seeds[0])
    failed = []
    for name, error in errors.items():
        print(f"{name:24s} {error:.3e}")
        tolerance = CHAIN_TOLERANCE if name == "lsfd_chain" else OP_TOLERANCE
        if not error < tolerance:
            failed.append(name)
    write_metadata(run_dir, "gradcheck", config, errors=errors)
    if failed:
        raise SrdkError(f"Gradient check failed: {', '.join(failed)}")


def bench(args: Namespace, config: RunConfig, run_dir: Path) -> None:
    """Sweep methods x seeds, writing report.csv and summary.csv."""
    del args
    path = _require(config.teacher_ckpt, "--teacher-ckpt", "teacher_ckpt")
    _require(config.corpus, "--corpus", "corpus")
    setup = BenchSetup(
        teacher_ckpt=load_checkpoint(path),
        student=config.student,
        distill=config.distill,
        train=config.train,
        corpus=config.corpus,  # type: ignore
        scale=config.scale,
        cache=config.cache,
        on_y=config.on_y,
        out=run_dir,
    )
    df = bench_compare(
        setup,
        config.methods,
        config.seeds,
        config.splits,
        workers=config.workers,
    )
    df.to_csv(run_dir / "report.csv", index=False)
    summary = summarize(df, reference_rows(setup, config.splits))
    summary.to_csv(run_dir / "summary.csv", index=False)
    print(summary.to_string(index=False))
    write_metadata(run_dir, "bench", config, rows=len(df))


def compare(args: Namespace, config: RunConfig, run_dir: Path) -> None:
    """Attribution maps of one or two checkpoints on one region."""
    paths = [_require(args.ckpt, "--ckpt", "ckpt")]
    if args.ckpt_b is not None:
        paths.append(_require(args.ckpt_b, "--ckpt-b", "ckpt_b"))
    corpus = _corpus(config)
    samples = corpus.split(args.split)
    if args.image_id is not None:
        samples = [each for each in samples if each.id == args.image_id]
    if not samples:
        raise ConfigError(
            f"No image {args.image_id} in split {args.split}", "image_id"
        )
    sample = samples[0]
    areas = {}
    for label, path in zip(("a", "b"), paths):
        model = model_from_checkpoint(load_checkpoint(path))
        result = attribution(
            model,
            to_tensor(sample.lr, corpus.mean_rgb),
            args.region,
            source_id=sample.id,
        )
        png = run_dir / f"attribution-{label}.png"
        save_gray_png(result.plane, png)
        areas[str(path)] = result.footprint_area()
        logger.info(FOOTPRINT, path, areas[str(path)], png)
    write_metadata(
        run_dir,
        "attribution",
        config,
        footprint_area=areas,
        image_id=sample.id,
        region=list(args.region),
    )


COMMANDS: dict[str, Callable[[Namespace, RunConfig, Path], None]] = {
    "attribution": compare,
    "bench": bench,
    "distill": student,
    "eval": score,
    "gradcheck": gradcheck,
    "synth-data": synth_data,
    "train-teacher": teacher,
}


@contextmanager
def context(
    key: str,
    args: Namespace,
    env: Mapping[str, str] | None = None,
):
    """Yield the resolved config; log on, end and re-raised failures."""
    configure_logger("srdk")
    logger.info(ON, key)
    try:
        yield resolve(args, env)
    except BaseException as e:
        logger.error(e)
        raise
    logger.info(END, key)


def main(
    argv: Sequence[str] | None = None,
    env: Mapping[str, str] | None = None,
) -> int:
    """Return 0 on success, 1 on bad config or arguments, 2 otherwise."""
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"srdk: {e}")
        return 1
    except SystemExit as e:
        return 0 if e.code is None else int(e.code)
    previous = is_strict()
    try:
        set_strict(args.strict or previous)
        with context(f"srdk.{args.command}", args, env) as config:
            run_dir = config.run_dir(args.command)
            logger.info(RUN, args.command, run_dir)
            COMMANDS[args.command](args, config, run_dir)
    except ConfigError as e:
        print(f"srdk: {e} ({e.key})")
        return 1
    except Exception:  # pylint: disable=broad-except
        return 2
    finally:
        set_strict(previous)
    return 0
