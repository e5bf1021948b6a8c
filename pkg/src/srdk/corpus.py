"""Corpus manifest, degradation, patch sampling and prefetch."""

from __future__ import annotations

from collections.abc import Generator, Iterable, Sequence
from dataclasses import dataclass, field
from json import dumps
from logging import getLogger
from pathlib import Path
from queue import Queue
from threading import Event, Thread
from typing import Any

import numpy as np
from cfgenvy import YamlMapping

from .image import (
    PATTERNS,
    ImageBuffer,
    TextureSpec,
    bicubic_downscale,
    channel_means,
    load_png,
    save_png,
    synth_texture,
    to_tensor,
)
from .tensor import InvalidShapeError, Tensor
from .utils import (
    ConfigError,
    SrdkError,
    digest,
    dump_json_file,
    load_json_file,
    path_get,
    path_put,
)

logger = getLogger(__name__)

SPLITS = ("train", "val", "test")
PATCH_SIZE = 48


class TooSmallError(SrdkError, ValueError):
    """Image smaller than the patch."""


class CorpusManifest:
    """Image entries with splits and the train-split channel means."""

    LOADED = dumps({"key": "corpus.manifest", "path": "%s", "entries": "%s"})

    def __init__(
        self,
        *,
        entries: Sequence[dict[str, Any]],
        mean_rgb: Sequence[float] | None = None,
    ):
        """__init__."""
        self.entries = [dict(each) for each in entries]
        seen = set()
        for each in self.entries:
            key = each.get("id")
            if key is None:
                raise ConfigError("Manifest entry without id", "id")
            if key in seen:
                raise ConfigError(f"Duplicate manifest id: {key}", "id")
            seen.add(key)
            if each.get("split") not in SPLITS:
                raise ConfigError(
                    f"Entry {key} split must be one of {SPLITS}", "split"
                )
            if "path" not in each and "spec" not in each:
                raise ConfigError(f"Entry {key} needs path or spec", "path")
        self.mean_rgb = None if mean_rgb is None else list(mean_rgb)

    @classmethod
    def load(cls, path: str | Path) -> CorpusManifest:
        """Load from a json file."""
        d = load_json_file(path)
        unknown = set(d) - {"entries", "mean_rgb"}
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"Unknown manifest key: {key}", key)
        result = cls(entries=d.get("entries", []), mean_rgb=d.get("mean_rgb"))
        logger.info(cls.LOADED, path, len(result.entries))
        return result

    def as_yaml(self) -> dict[str, Any]:
        """As yaml."""
        return {"entries": self.entries, "mean_rgb": self.mean_rgb}

    def dump(self, path: str | Path) -> None:
        """Dump to a json file."""
        dump_json_file(self.as_yaml(), path)

    def split(self, name: str) -> list[dict[str, Any]]:
        """Return entries of a split in manifest order."""
        return [each for each in self.entries if each["split"] == name]


@dataclass
class Sample:
    """HR image and its bicubic LR."""

    id: str
    hr: ImageBuffer
    lr: ImageBuffer


class Corpus:
    """Manifest bound to a root directory and a scale."""

    def __init__(
        self,
        manifest: CorpusManifest,
        *,
        root: str | Path = ".",
        scale: int = 2,
        cache: str | Path | None = None,
    ):
        """__init__."""
        self.manifest = manifest
        self.root = Path(root)
        self.scale = scale
        self.cache = None if cache is None else Path(cache)
        self._splits: dict[str, list[Sample]] = {}
        if manifest.mean_rgb is None:
            manifest.mean_rgb = channel_means(
                self.hr_image(each) for each in manifest.split("train")
            )

    @classmethod
    def load(
        cls,
        path: str | Path,
        *,
        scale: int = 2,
        cache: str | Path | None = None,
    ) -> Corpus:
        """Load a manifest file; relative image paths are under its dir."""
        path = Path(path)
        return cls(
            CorpusManifest.load(path),
            root=path.parent,
            scale=scale,
            cache=cache,
        )

    @property
    def mean_rgb(self) -> list[float]:
        """Return the train-split channel means."""
        assert self.manifest.mean_rgb is not None
        return self.manifest.mean_rgb

    def hr_image(self, entry: dict[str, Any]) -> ImageBuffer:
        """Load or render the HR image, cropped to a multiple of scale."""
        if "path" in entry:
            img = load_png(self.root / entry["path"])
        else:
            spec = TextureSpec(**entry["spec"])
            img = synth_texture(
                spec, np.random.default_rng(entry.get("seed", 0))
            )
        return img.crop_to_multiple(self.scale)

    def degrade(self, hr: ImageBuffer) -> ImageBuffer:
        """Bicubic LR of hr, through the on-disk cache when configured."""
        if self.cache is None:
            return bicubic_downscale(hr, self.scale)
        params = {"kernel": "bicubic", "scale": self.scale}
        params["shape"] = list(hr.pixels.shape)
        key = digest(params, hr.pixels.tobytes())
        lr = path_get(self.cache, key)
        if lr is None:
            lr = bicubic_downscale(hr, self.scale)
            path_put(self.cache, key, lr.pixels)
            return lr
        return ImageBuffer(lr)

    def split(self, name: str) -> list[Sample]:
        """Return the samples of a split."""
        if name not in self._splits:
            samples = []
            for entry in self.manifest.split(name):
                hr = self.hr_image(entry)
                samples.append(Sample(entry["id"], hr, self.degrade(hr)))
            self._splits[name] = samples
        return self._splits[name]


@dataclass
class PatchPair:
    """Aligned LR and HR crops with provenance."""

    lr: Tensor
    hr: Tensor
    source_id: str = ""
    offset: tuple[int, int] = (0, 0)
    flipped: bool = False


def sample_patch(  # pylint: disable=too-many-arguments
    hr: ImageBuffer,
    lr: ImageBuffer,
    factor: int,
    rng: np.random.Generator,
    mean_rgb: Sequence[float] = (0.0, 0.0, 0.0),
    *,
    size: int = PATCH_SIZE,
    source_id: str = "",
) -> PatchPair:
    """Uniform LR crop of size x size and the HR crop at factor x offset."""
    if lr.height < size or lr.width < size:
        raise TooSmallError(
            f"LR {lr.height}x{lr.width} smaller than patch {size}."
        )
    if (hr.height, hr.width) != (lr.height * factor, lr.width * factor):
        raise InvalidShapeError(
            f"HR {hr.height}x{hr.width} is not {factor}x LR "
            f"{lr.height}x{lr.width}."
        )
    y = int(rng.integers(0, lr.height - size + 1))
    x = int(rng.integers(0, lr.width - size + 1))
    hs = size * factor
    return PatchPair(
        lr=to_tensor(lr.crop(y, x, size, size), mean_rgb),
        hr=to_tensor(hr.crop(y * factor, x * factor, hs, hs), mean_rgb),
        source_id=source_id,
        offset=(y, x),
        flipped=False,
    )


def flip_pair(pair: PatchPair) -> PatchPair:
    """Flip both crops left-right and toggle the flag."""
    return PatchPair(
        lr=Tensor(pair.lr.data[..., ::-1]),
        hr=Tensor(pair.hr.data[..., ::-1]),
        source_id=pair.source_id,
        offset=pair.offset,
        flipped=not pair.flipped,
    )


def hflip(pair: PatchPair, rng: np.random.Generator) -> PatchPair:
    """Flip with probability one half; never rotates."""
    if rng.random() < 0.5:
        return flip_pair(pair)
    return pair


@dataclass
class Batch:
    """Stacked patch pairs."""

    lr: Tensor
    hr: Tensor
    pairs: list[PatchPair] = field(default_factory=list)


class PatchStream:
    """Deterministic batches; batch (epoch, index) has its own rng stream."""

    def __init__(  # pylint: disable=too-many-arguments
        self,
        samples: Sequence[Sample],
        *,
        scale: int,
        mean_rgb: Sequence[float],
        batch_size: int = 16,
        patch_size: int = PATCH_SIZE,
        seed: int = 0,
    ):
        """__init__."""
        if not samples:
            raise ConfigError("Empty train split", "corpus")
        self.samples = list(samples)
        self.scale = scale
        self.mean_rgb = list(mean_rgb)
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.seed = seed

    def batch(self, epoch: int, index: int) -> Batch:
        """Return batch index of epoch, sampled with replacement."""
        rng = np.random.default_rng([self.seed, epoch, index])
        pairs = []
        for _ in range(self.batch_size):
            sample = self.samples[int(rng.integers(0, len(self.samples)))]
            pair = sample_patch(
                sample.hr,
                sample.lr,
                self.scale,
                rng,
                self.mean_rgb,
                size=self.patch_size,
                source_id=sample.id,
            )
            pairs.append(hflip(pair, rng))
        return Batch(
            lr=Tensor(np.concatenate([each.lr.data for each in pairs])),
            hr=Tensor(np.concatenate([each.hr.data for each in pairs])),
            pairs=pairs,
        )

    def epoch(self, epoch: int, steps: int) -> Generator[Batch]:
        """Yield the batches of an epoch in order."""
        for index in range(steps):
            yield self.batch(epoch, index)


_DONE = object()


def prefetch(batches: Iterable[Any], depth: int = 4) -> Generator[Any]:
    """Produce items on a worker thread through a bounded queue."""
    if depth < 1:
        yield from batches
        return
    queue: Queue = Queue(maxsize=depth)
    stop = Event()

    def produce():
        try:
            for each in batches:
                if stop.is_set():
                    return
                queue.put(each)
        except BaseException as e:  # pylint: disable=broad-except
            queue.put(e)
            return
        queue.put(_DONE)

    thread = Thread(target=produce, name="srdk-prefetch", daemon=True)
    thread.start()
    try:
        while True:
            item = queue.get()
            if item is _DONE:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while thread.is_alive():
            while not queue.empty():
                queue.get_nowait()
            thread.join(timeout=0.01)


class SynthConfig(YamlMapping):  # pylint: disable=too-many-instance-attributes
    """Synthetic texture corpus."""

    YAML = "!synth_config"

    def __init__(  # pylint: disable=too-many-arguments
        self,
        *,
        n_train: int = 200,
        n_val: int = 32,
        n_test: int = 0,
        size: int = 64,
        seed: int = 0,
        patterns: Sequence[str] = PATTERNS,
        period_min: float = 2.5,
        period_max: float = 12.0,
        contrast_min: float = 0.5,
        write_png: bool = True,
    ):
        """__init__."""
        self.n_train = n_train
        self.n_val = n_val
        self.n_test = n_test
        self.size = size
        self.seed = seed
        self.patterns = list(patterns)
        self.period_min = period_min
        self.period_max = period_max
        self.contrast_min = contrast_min
        self.write_png = write_png

    def as_yaml(self) -> dict[str, Any]:
        """As yaml."""
        return {
            "contrast_min": self.contrast_min,
            "n_test": self.n_test,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "patterns": self.patterns,
            "period_max": self.period_max,
            "period_min": self.period_min,
            "seed": self.seed,
            "size": self.size,
            "write_png": self.write_png,
        }

    def validate(self) -> None:
        """Raise ConfigError on the first invalid field."""
        for key in ("n_train", "n_val", "n_test"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0", key)
        if self.n_train < 1:
            raise ConfigError("n_train must be >= 1", "n_train")
        for each in self.patterns:
            if each not in PATTERNS:
                raise ConfigError(f"Unknown pattern: {each}", "patterns")
        if not 2.0 <= self.period_min <= self.period_max:
            raise ConfigError(
                "need 2 <= period_min <= period_max", "period_min"
            )


def synth_corpus(config: SynthConfig, out: str | Path) -> CorpusManifest:
    """Write a synthetic texture corpus and its manifest.json under out."""
    config.validate()
    out = Path(out)
    rng = np.random.default_rng(config.seed)
    entries = []
    counts = (
        ("train", config.n_train),
        ("val", config.n_val),
        ("test", config.n_test),
    )
    for split, count in counts:
        for i in range(count):
            spec = TextureSpec(
                size=config.size,
                pattern=config.patterns[i % len(config.patterns)],
                period=float(
                    rng.uniform(config.period_min, config.period_max)
                ),
                angle=float(rng.uniform(0.0, 180.0)),
                contrast=float(rng.uniform(config.contrast_min, 1.0)),
                tint=[float(each) for each in rng.uniform(0.6, 1.0, 3)],
            )
            entry: dict[str, Any] = {
                "id": f"{split}-{i:04d}",
                "seed": int(rng.integers(0, 2**31)),
                "spec": spec.as_dict(),
                "split": split,
            }
            if config.write_png:
                (out / "images").mkdir(parents=True, exist_ok=True)
                name = f"images/{entry['id']}.png"
                img = synth_texture(
                    spec, np.random.default_rng(entry["seed"])
                )
                save_png(img, out / name)
                entry["path"] = name
            entries.append(entry)
    train_images = [
        synth_texture(
            TextureSpec(**each["spec"]), np.random.default_rng(each["seed"])
        )
        for each in entries
        if each["split"] == "train"
    ]
    manifest = CorpusManifest(
        entries=entries, mean_rgb=channel_means(train_images)
    )
    out.mkdir(parents=True, exist_ok=True)
    manifest.dump(out / "manifest.json")
    logger.info(
        dumps({"key": "corpus.synth", "out": "%s", "entries": "%s"}),
        out,
        len(entries),
    )
    return manifest
