"""Conftest."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from pytest import fixture

from srdk.corpus import Corpus, SynthConfig, synth_corpus
from srdk.model import ModelConfig
from srdk.ops import strict
from srdk.train import TrainConfig


@fixture(autouse=True)
def strict_mode():
    """Single-threaded unoptimized contractions for every test."""
    with strict():
        yield


@fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(0)


@fixture
def teacher_config():
    """Toy teacher."""
    return ModelConfig(
        variant="rcan_like",
        channels=8,
        n_blocks=1,
        n_groups=2,
        reduction=4,
        scale=2,
        seed=1,
    )


@fixture
def student_config():
    """Toy student."""
    return ModelConfig(
        variant="rcan_like",
        channels=4,
        n_blocks=1,
        n_groups=2,
        reduction=2,
        scale=2,
        seed=2,
    )


@fixture
def train_config():
    """Two short epochs of small batches."""
    return TrainConfig(
        lr=1e-3,
        epochs=2,
        halve_at_epoch=1,
        batch_size=2,
        steps_per_epoch=2,
        patch_size=4,
        prefetch_depth=0,
    )


@fixture
def manifest_path(tmp_path) -> Path:
    """Tiny synthetic corpus with 16 x 16 HR images."""
    synth_corpus(
        SynthConfig(n_train=4, n_val=2, n_test=1, size=16, seed=3),
        tmp_path / "corpus",
    )
    return tmp_path / "corpus" / "manifest.json"


@fixture
def corpus(manifest_path) -> Corpus:
    """Tiny corpus at scale 2."""
    return Corpus.load(manifest_path, scale=2)


@fixture
def parameter_bytes():
    """Return raw bytes of every parameter, for equality checks."""

    def snapshot(parameters):
        return [each.data.tobytes() for each in parameters]

    return snapshot
