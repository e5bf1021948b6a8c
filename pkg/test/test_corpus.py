"""Test corpus."""

import numpy as np
from numpy.testing import assert_array_equal
from pytest import mark, raises

from srdk.corpus import (
    Corpus,
    CorpusManifest,
    PatchStream,
    SynthConfig,
    TooSmallError,
    PatchPair,
    flip_pair,
    hflip,
    prefetch,
    sample_patch,
    synth_corpus,
)
from srdk.image import bicubic_downscale, to_tensor
from srdk.tensor import InvalidShapeError, Tensor
from srdk.utils import ConfigError, dump_json_file


@mark.parametrize(
    "entries,key",
    (
        ([{"split": "train", "path": "a.png"}], "id"),
        (
            [
                {"id": "a", "split": "train", "path": "a.png"},
                {"id": "a", "split": "val", "path": "b.png"},
            ],
            "id",
        ),
        ([{"id": "a", "split": "dev", "path": "a.png"}], "split"),
        ([{"id": "a", "split": "train"}], "path"),
    ),
)
def test_manifest_errors(entries, key):
    """Test manifest validation names the key."""
    with raises(ConfigError) as e:
        CorpusManifest(entries=entries)
    assert e.value.key == key


def test_manifest_unknown_key(tmp_path):
    """Test unknown top-level keys are rejected."""
    path = tmp_path / "manifest.json"
    dump_json_file({"entries": [], "scale": 2}, path)
    with raises(ConfigError) as e:
        CorpusManifest.load(path)
    assert e.value.key == "scale"


def test_synth_corpus(tmp_path, manifest_path, corpus):
    """Test the written manifest, images and splits."""
    manifest = CorpusManifest.load(manifest_path)
    assert len(manifest.split("train")) == 4
    assert len(manifest.split("val")) == 2
    assert len(manifest.split("test")) == 1
    for each in manifest.entries:
        assert (manifest_path.parent / each["path"]).exists()
    assert len(corpus.mean_rgb) == 3
    assert all(0.0 < each < 1.0 for each in corpus.mean_rgb)
    sample = corpus.split("train")[0]
    assert (sample.hr.height, sample.hr.width) == (16, 16)
    assert sample.lr == bicubic_downscale(sample.hr, 2)
    again = synth_corpus(
        SynthConfig(n_train=4, n_val=2, n_test=1, size=16, seed=3),
        tmp_path / "again",
    )
    assert again.entries == manifest.entries


def test_rendered_entries_match_pngs(tmp_path, corpus):
    """Test spec-only entries render the same pixels as the written pngs."""
    synth_corpus(
        SynthConfig(
            n_train=4, n_val=2, n_test=1, size=16, seed=3, write_png=False
        ),
        tmp_path / "specs",
    )
    rendered = Corpus.load(tmp_path / "specs" / "manifest.json", scale=2)
    assert rendered.mean_rgb == corpus.mean_rgb
    for a, b in zip(rendered.split("val"), corpus.split("val")):
        assert a.hr == b.hr


@mark.parametrize(
    "kwargs,key",
    (
        ({"n_train": 0}, "n_train"),
        ({"n_val": -1}, "n_val"),
        ({"patterns": ["noise"]}, "patterns"),
        ({"period_min": 1.0}, "period_min"),
    ),
)
def test_synth_config_errors(tmp_path, kwargs, key):
    """Test synth config validation."""
    with raises(ConfigError) as e:
        synth_corpus(SynthConfig(**kwargs), tmp_path)
    assert e.value.key == key


def test_degrade_cache(tmp_path, manifest_path):
    """Test cached degradations equal fresh ones."""
    cache = tmp_path / "cache"
    a = Corpus.load(manifest_path, scale=2, cache=cache)
    first = a.split("val")
    assert any(cache.iterdir())
    b = Corpus.load(manifest_path, scale=2, cache=cache)
    for x, y in zip(first, b.split("val")):
        assert x.lr == y.lr


def test_sample_patch_alignment(corpus, rng):
    """Test the HR crop sits at factor times the LR offset."""
    sample = corpus.split("train")[0]
    pair = sample_patch(
        sample.hr, sample.lr, 2, rng, corpus.mean_rgb, size=4
    )
    y, x = pair.offset
    assert pair.lr.shape == (1, 3, 4, 4)
    assert pair.hr.shape == (1, 3, 8, 8)
    expected_lr = to_tensor(sample.lr.crop(y, x, 4, 4), corpus.mean_rgb)
    expected_hr = to_tensor(
        sample.hr.crop(2 * y, 2 * x, 8, 8), corpus.mean_rgb
    )
    assert_array_equal(pair.lr.data, expected_lr.data)
    assert_array_equal(pair.hr.data, expected_hr.data)


def test_sample_patch_errors(corpus, rng):
    """Test too-small images and mismatched pairs raise."""
    sample = corpus.split("train")[0]
    with raises(TooSmallError):
        sample_patch(sample.hr, sample.lr, 2, rng, size=9)
    with raises(InvalidShapeError):
        sample_patch(sample.hr, sample.lr, 3, rng, size=4)


def test_flip_pair(corpus, rng):
    """Test flipping mirrors both crops and toggles the flag."""
    sample = corpus.split("train")[0]
    pair = sample_patch(sample.hr, sample.lr, 2, rng, size=4)
    flipped = flip_pair(pair)
    assert flipped.flipped
    assert_array_equal(flipped.hr.data, pair.hr.data[..., ::-1])
    back = flip_pair(flipped)
    assert not back.flipped
    assert_array_equal(back.lr.data, pair.lr.data)


def test_hflip_rate_and_alignment():
    """Test half of the draws flip and LR and HR always flip together."""
    pair = PatchPair(
        lr=Tensor(np.arange(12.0).reshape(1, 3, 2, 2)),
        hr=Tensor(np.arange(48.0).reshape(1, 3, 4, 4)),
    )
    rng = np.random.default_rng(11)
    flips = 0
    for _ in range(10_000):
        out = hflip(pair, rng)
        if out.flipped:
            flips += 1
            assert_array_equal(out.lr.data, pair.lr.data[..., ::-1])
            assert_array_equal(out.hr.data, pair.hr.data[..., ::-1])
        else:
            assert_array_equal(out.lr.data, pair.lr.data)
            assert_array_equal(out.hr.data, pair.hr.data)
    assert 0.48 <= flips / 10_000 <= 0.52


def test_patch_stream_is_deterministic(corpus):
    """Test batch (epoch, index) depends only on the seed."""

    def stream():
        return PatchStream(
            corpus.split("train"),
            scale=2,
            mean_rgb=corpus.mean_rgb,
            batch_size=3,
            patch_size=4,
            seed=5,
        )

    a = stream().batch(1, 2)
    b = stream().batch(1, 2)
    c = stream().batch(1, 3)
    assert a.lr.shape == (3, 3, 4, 4)
    assert a.hr.shape == (3, 3, 8, 8)
    assert_array_equal(a.lr.data, b.lr.data)
    assert_array_equal(a.hr.data, b.hr.data)
    assert [p.offset for p in a.pairs] == [p.offset for p in b.pairs]
    assert not np.array_equal(a.hr.data, c.hr.data)
    assert len(list(stream().epoch(0, 4))) == 4


def test_patch_stream_needs_samples():
    """Test an empty split raises."""
    with raises(ConfigError):
        PatchStream([], scale=2, mean_rgb=[0.0, 0.0, 0.0])


@mark.parametrize("depth", (0, 1, 4))
def test_prefetch_keeps_order(depth):
    """Test items arrive in production order."""
    assert list(prefetch(iter(range(20)), depth)) == list(range(20))


def test_prefetch_raises_producer_errors():
    """Test a producer exception surfaces in the consumer."""

    def produce():
        yield 1
        raise ValueError("boom")

    actual = []
    with raises(ValueError):
        for each in prefetch(produce(), 2):
            actual.append(each)
    assert actual == [1]


def test_prefetch_early_exit():
    """Test closing the consumer stops the producer."""
    stream = prefetch(iter(range(1000)), 1)
    assert next(stream) == 0
    stream.close()
