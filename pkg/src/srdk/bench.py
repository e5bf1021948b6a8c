"""Method x seed benchmark sweeps."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from json import dumps
from logging import getLogger
from multiprocessing import Pool
from pathlib import Path

from numpy import nan
from pandas import DataFrame, concat

from .checkpoint import Checkpoint
from .corpus import Corpus
from .distill import DistillConfig
from .evaluate import BicubicModel, evaluate
from .model import ModelConfig
from .train import TrainConfig, distill, model_from_checkpoint

logger = getLogger(__name__)

COLUMNS = ["method", "seed", "split", "psnr_db"]
SUMMARY_COLUMNS = ["method", "split", "mean", "std", "count"]

FAILED = dumps(
    {"key": "bench.cell.failed", "method": "%s", "seed": "%s", "error": "%s"}
)
CELL = dumps({"key": "bench.cell", "method": "%s", "seed": "%s"})


@dataclass
class BenchSetup:  # pylint: disable=too-many-instance-attributes
    """Everything the cells share."""

    teacher_ckpt: Checkpoint
    student: ModelConfig
    distill: DistillConfig
    train: TrainConfig
    corpus: str | Path
    scale: int
    cache: str | Path | None = None
    on_y: bool = True
    out: str | Path | None = None

    def load_corpus(self) -> Corpus:
        """Load the shared corpus."""
        return Corpus.load(self.corpus, scale=self.scale, cache=self.cache)


def run_cell(
    setup: BenchSetup,
    method: str,
    seed: int,
    splits: Sequence[str],
) -> list[dict]:
    """Train and score one (method, seed); failures become NaN rows."""
    logger.info(CELL, method, seed)
    try:
        distill_config = DistillConfig(
            **{**setup.distill.as_yaml(), "method": method, "seed": seed}
        )
        train_config = TrainConfig(**{**setup.train.as_yaml(), "seed": seed})
        student_config = ModelConfig(
            **{**setup.student.as_yaml(), "seed": seed}
        )
        corpus = setup.load_corpus()
        run_dir = None
        if setup.out is not None:
            run_dir = Path(setup.out) / f"{method}-seed{seed}"
        result = distill(
            setup.teacher_ckpt,
            student_config,
            distill_config,
            train_config,
            corpus,
            run_dir=run_dir,
            on_y=setup.on_y,
        )
        student = model_from_checkpoint(result.checkpoint)
        rows = []
        for split in splits:
            samples = corpus.split(split)
            psnr_db = nan
            if samples:
                psnr_db = evaluate(
                    student,
                    samples,
                    setup.scale,
                    corpus.mean_rgb,
                    on_y=setup.on_y,
                    method=method,
                    seed=seed,
                    split=split,
                ).aggregate
            rows.append(
                {
                    "method": method,
                    "seed": seed,
                    "split": split,
                    "psnr_db": psnr_db,
                }
            )
        return rows
    except Exception as e:  # pylint: disable=broad-except
        logger.error(FAILED, method, seed, e)
        return [
            {"method": method, "seed": seed, "split": split, "psnr_db": nan}
            for split in splits
        ]


def _run_cell(args) -> list[dict]:
    return run_cell(*args)


def bench_compare(  # pylint: disable=too-many-arguments
    setup: BenchSetup,
    methods: Sequence[str],
    seeds: Sequence[int],
    splits: Sequence[str] = ("val", "test"),
    *,
    workers: int = 1,
) -> DataFrame:
    """Return one row per (method, seed, split), in method order."""
    cells = [
        (setup, method, seed, tuple(splits))
        for method in methods
        for seed in seeds
    ]
    if workers > 1:
        with Pool(workers) as pool:
            results = pool.map(_run_cell, cells)
    else:
        results = [_run_cell(each) for each in cells]
    rows = [row for result in results for row in result]
    return DataFrame(rows, columns=COLUMNS)


def reference_rows(
    setup: BenchSetup,
    splits: Sequence[str],
) -> DataFrame:
    """Teacher and bicubic scores per split."""
    corpus = setup.load_corpus()
    teacher = model_from_checkpoint(setup.teacher_ckpt)
    bicubic = BicubicModel(setup.scale, corpus.mean_rgb)
    rows = []
    for label, model in (("teacher", teacher), ("bicubic", bicubic)):
        for split in splits:
            if not corpus.split(split):
                continue
            report = evaluate(
                model,
                corpus.split(split),
                setup.scale,
                corpus.mean_rgb,
                on_y=setup.on_y,
                method=label,
                split=split,
            )
            rows.append(
                {
                    "method": label,
                    "seed": None,
                    "split": split,
                    "psnr_db": report.aggregate,
                }
            )
    return DataFrame(rows, columns=COLUMNS)


def summarize(
    df: DataFrame,
    references: DataFrame | None = None,
) -> DataFrame:
    """Mean and std of psnr_db per (method, split) in first-seen order."""
    frames = [df] if references is None else [df, references]
    combined = concat(frames, ignore_index=True)
    grouped = combined.groupby(["method", "split"], sort=False)["psnr_db"]
    result = grouped.agg(["mean", "std", "count"]).reset_index()
    return result[SUMMARY_COLUMNS]
