"""Desk-scale distillation experiments."""

from logging import getLogger

import numpy as np
from pytest import fixture, mark

from srdk.corpus import Corpus, SynthConfig, synth_corpus
from srdk.distill import DistillConfig
from srdk.evaluate import BicubicModel, attribution, evaluate
from srdk.image import to_tensor
from srdk.model import ModelConfig
from srdk.train import (
    TrainConfig,
    distill,
    model_from_checkpoint,
    train_teacher,
)

logger = getLogger(__name__)

METHODS = ("vanilla", "fitnet", "lfd", "lsfd")
SEEDS = (0, 1, 2)


def train_config(steps, seed=0):
    """Two epochs of steps in total over 16 x 16 LR patches."""
    return TrainConfig(
        lr=1e-3,
        epochs=2,
        halve_at_epoch=1,
        batch_size=16,
        steps_per_epoch=steps // 2,
        patch_size=16,
        seed=seed,
        prefetch_depth=2,
    )


@fixture(scope="module")
def desk(tmp_path_factory):
    """Corpus and a trained toy teacher."""
    root = tmp_path_factory.mktemp("desk")
    synth_corpus(
        SynthConfig(n_train=200, n_val=32, size=64, seed=0), root / "corpus"
    )
    corpus = Corpus.load(root / "corpus" / "manifest.json", scale=2)
    teacher = train_teacher(
        ModelConfig(channels=16, n_blocks=4, n_groups=2, reduction=4),
        train_config(2000),
        corpus,
    )
    return corpus, teacher


@fixture(scope="module")
def scores(desk):
    """Val PSNR per method and seed."""
    corpus, teacher = desk
    result = {}
    for method in METHODS:
        for seed in SEEDS:
            student = distill(
                teacher.checkpoint,
                ModelConfig(
                    channels=8, n_blocks=2, n_groups=2, reduction=4, seed=seed
                ),
                DistillConfig(method=method, seed=seed),
                train_config(1500, seed),
                corpus,
            )
            model = model_from_checkpoint(student.checkpoint)
            result[method, seed] = evaluate(
                model, corpus.split("val"), 2, corpus.mean_rgb
            ).aggregate
    return result


@mark.slow
def test_every_method_beats_bicubic(desk, scores):
    """Test every student clears the bicubic floor."""
    corpus, _ = desk
    floor = evaluate(
        BicubicModel(2, corpus.mean_rgb),
        corpus.split("val"),
        2,
        corpus.mean_rgb,
    ).aggregate
    for key, value in scores.items():
        assert value > floor, key


@mark.slow
def test_lsfd_beats_vanilla(scores):
    """Test lsfd over vanilla in mean and in most seeds."""
    lsfd = [scores["lsfd", seed] for seed in SEEDS]
    vanilla = [scores["vanilla", seed] for seed in SEEDS]
    assert np.mean(lsfd) >= np.mean(vanilla)
    assert sum(a > b for a, b in zip(lsfd, vanilla)) >= 2


@mark.slow
def test_deep_regressor_beats_fitnet(scores):
    """Test five 3x3 regressor layers over one 1x1 layer."""
    lfd = [scores["lfd", seed] for seed in SEEDS]
    fitnet = [scores["fitnet", seed] for seed in SEEDS]
    assert np.mean(lfd) >= np.mean(fitnet)


@mark.slow
def test_attribution_footprints(desk):
    """Report lsfd and vanilla footprints on one region."""
    corpus, teacher = desk
    sample = corpus.split("val")[0]
    lr = to_tensor(sample.lr, corpus.mean_rgb)
    areas = {}
    for method in ("vanilla", "lsfd"):
        student = distill(
            teacher.checkpoint,
            ModelConfig(channels=8, n_blocks=2, n_groups=2, reduction=4),
            DistillConfig(method=method),
            train_config(1500),
            corpus,
        )
        model = model_from_checkpoint(student.checkpoint)
        areas[method] = attribution(
            model, lr, (28, 28, 8, 8), source_id=sample.id
        ).footprint_area()
    logger.info(
        '{"key": "acceptance.footprint", "vanilla": "%s", "lsfd": "%s"}',
        areas["vanilla"],
        areas["lsfd"],
    )
    assert all(each > 0 for each in areas.values())
