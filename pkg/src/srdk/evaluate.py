"""PSNR evaluation and gradient attribution."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from json import dumps
from logging import getLogger
from math import inf, isinf, log10
from pathlib import Path
from typing import Any

import numpy as np
from pandas import DataFrame

from .corpus import Sample
from .image import resize_array, to_tensor
from .ops import crop, reduce
from .ops import scale as rescale
from .tensor import InvalidShapeError, Tape, Tensor, no_grad
from .utils import SrdkError, dump_json_file, profile

logger = getLogger(__name__)

Y_WEIGHTS = np.array([65.738, 129.057, 25.064]) / 256.0
Y_OFFSET = 16.0 / 256.0

SRModel = Callable[[Tensor], tuple[Tensor, list[Tensor]]]


class InvalidArgumentError(SrdkError, ValueError):
    """Invalid argument."""


def _array(x: Tensor | np.ndarray) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, np.float64)


def rgb_to_y(img: Tensor | np.ndarray) -> Tensor:
    """BT.601 luma of (N, 3, H, W) on the [0, 1] scale."""
    data = _array(img)
    if data.ndim != 4 or data.shape[1] != 3:
        raise InvalidShapeError(f"rgb_to_y expects (N, 3, H, W): {data.shape}")
    y = np.einsum("c,nchw->nhw", Y_WEIGHTS, data, optimize=False)
    return Tensor((y + Y_OFFSET)[:, None])


def quantize(data: np.ndarray) -> np.ndarray:
    """Snap [0, 1] values to the 8-bit grid."""
    return np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def _psnr(pred: np.ndarray, target: np.ndarray, on_y: bool) -> float:
    pred = quantize(pred)
    target = quantize(target)
    if on_y:
        pred = rgb_to_y(pred).data
        target = rgb_to_y(target).data
    diff = pred - target
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return inf
    return 10.0 * log10(1.0 / mse)


def psnr(
    pred: Tensor | np.ndarray,
    target: Tensor | np.ndarray,
    shave: int = 0,
    on_y: bool = True,
) -> float:
    """PSNR in dB of [0, 1] images after an 8-bit snap and border shave.

    Identical images return inf.
    """
    p = _array(pred)
    t = _array(target)
    if p.shape != t.shape or p.ndim != 4:
        raise InvalidShapeError(f"psnr shapes {p.shape} vs {t.shape}")
    h, w = p.shape[2:]
    if shave < 0 or 2 * shave >= h or 2 * shave >= w:
        raise InvalidArgumentError(f"shave {shave} leaves nothing of {h}x{w}")
    if shave:
        p = p[:, :, shave:-shave, shave:-shave]
        t = t[:, :, shave:-shave, shave:-shave]
    return _psnr(p, t, on_y)


def psnr_region(
    pred: Tensor | np.ndarray,
    target: Tensor | np.ndarray,
    region: tuple[int, int, int, int],
    on_y: bool = True,
) -> float:
    """PSNR restricted to region (x, y, w, h)."""
    p = _array(pred)
    t = _array(target)
    if p.shape != t.shape or p.ndim != 4:
        raise InvalidShapeError(f"psnr shapes {p.shape} vs {t.shape}")
    x, y, w, h = region
    if w < 1 or h < 1 or x < 0 or y < 0:
        raise InvalidArgumentError(f"Empty region: {region}")
    if y + h > p.shape[2] or x + w > p.shape[3]:
        raise InvalidArgumentError(f"Region {region} outside {p.shape[2:]}")
    return _psnr(
        p[:, :, y : y + h, x : x + w], t[:, :, y : y + h, x : x + w], on_y
    )


@dataclass
class EvalReport:
    """Per-image PSNR and the aggregate mean."""

    method: str
    rows: list[dict[str, Any]] = field(default_factory=list)
    config_digest: str = ""
    seed: int | None = None
    split: str = "val"

    @property
    def aggregate(self) -> float:
        """Return the mean PSNR over every row.

        A single identical image makes the mean inf; see identical.
        """
        if not self.rows:
            raise InvalidArgumentError("Empty report")
        return float(np.mean([each["psnr_db"] for each in self.rows]))

    @property
    def identical(self) -> bool:
        """Return whether any row is an exact reconstruction."""
        return any(isinf(each["psnr_db"]) for each in self.rows)

    def frame(self) -> DataFrame:
        """Return the per-image rows."""
        df = DataFrame(self.rows, columns=["id", "psnr_db"])
        df.insert(0, "split", self.split)
        df.insert(0, "seed", self.seed)
        df.insert(0, "method", self.method)
        return df

    def to_csv(self, path: str | Path) -> None:
        """Write per-image rows."""
        self.frame().to_csv(path, index=False)

    def as_yaml(self) -> dict[str, Any]:
        """As yaml."""
        aggregate = self.aggregate
        return {
            "aggregate_psnr_db": None if isinf(aggregate) else aggregate,
            "config_digest": self.config_digest,
            "identical": self.identical,
            "method": self.method,
            "rows": [
                {
                    "id": each["id"],
                    "psnr_db": (
                        None if isinf(each["psnr_db"]) else each["psnr_db"]
                    ),
                }
                for each in self.rows
            ],
            "seed": self.seed,
            "split": self.split,
        }

    def dump(self, path: str | Path) -> None:
        """Write as json; inf is written as null with identical set."""
        dump_json_file(self.as_yaml(), path)


class BicubicModel:
    """Bicubic upsampling as a pseudo-model, the PSNR floor."""

    def __init__(self, scale: int, mean_rgb: Sequence[float]):
        """__init__."""
        self.scale = scale
        self.mean = np.asarray(mean_rgb, dtype=np.float64).reshape(3, 1, 1)

    def __call__(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """__call__."""
        out = []
        for each in x.data:
            hwc = ((each + self.mean) * 255.0).transpose(1, 2, 0)
            h, w = hwc.shape[:2]
            up = resize_array(hwc, h * self.scale, w * self.scale)
            out.append(up.transpose(2, 0, 1) / 255.0 - self.mean)
        return Tensor(np.stack(out)), []


class IdentityModel:  # pylint: disable=too-few-public-methods
    """Passthrough for scale 1."""

    def __call__(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """__call__."""
        return rescale(x, 1.0), []


def super_resolve(
    model: SRModel,
    sample: Sample,
    mean_rgb: Sequence[float],
) -> np.ndarray:
    """Return the de-normalized (1, 3, SH, SW) output for a full image."""
    with no_grad():
        sr, _ = model(to_tensor(sample.lr, mean_rgb))
    mean = np.asarray(mean_rgb, dtype=np.float64).reshape(1, 3, 1, 1)
    return sr.data + mean


def evaluate(  # pylint: disable=too-many-arguments
    model: SRModel,
    samples: Sequence[Sample],
    scale: int,
    mean_rgb: Sequence[float],
    *,
    on_y: bool = True,
    method: str = "",
    seed: int | None = None,
    config_digest: str = "",
    split: str = "val",
) -> EvalReport:
    """Forward full LR images and score against HR with shave = scale."""
    rows = []
    with profile("srdk.evaluate"):
        for sample in samples:
            pred = super_resolve(model, sample, mean_rgb)
            target = sample.hr.pixels.transpose(2, 0, 1)[None] / 255.0
            rows.append(
                {
                    "id": sample.id,
                    "psnr_db": psnr(pred, target, shave=scale, on_y=on_y),
                }
            )
    report = EvalReport(
        method=method,
        rows=rows,
        config_digest=config_digest,
        seed=seed,
        split=split,
    )
    logger.info(
        dumps(
            {
                "key": "evaluate",
                "method": "%s",
                "split": "%s",
                "psnr_db": "%s",
            }
        ),
        method,
        split,
        report.aggregate,
    )
    return report


@dataclass
class AttributionMap:
    """Normalized input-gradient magnitude over LR coordinates."""

    source_id: str
    region: tuple[int, int, int, int]
    plane: np.ndarray

    def footprint_area(self, threshold: float = 0.05) -> int:
        """Return the count of pixels above threshold * max."""
        return footprint_area(self.plane, threshold)


def footprint_area(plane: np.ndarray, threshold: float = 0.05) -> int:
    """Return the count of pixels above threshold * max."""
    peak = float(plane.max()) if plane.size else 0.0
    if peak <= 0.0:
        return 0
    return int(np.count_nonzero(plane > threshold * peak))


def attribution(
    model: SRModel,
    lr: Tensor,
    region: tuple[int, int, int, int],
    *,
    source_id: str = "",
) -> AttributionMap:
    """Gradient of the summed SR region w.r.t. the LR input.

    region is (x, y, w, h) in SR coordinates. The map is the per-pixel L2
    norm over input channels, scaled to max 1 when nonzero.
    """
    x, y, w, h = region
    if w < 1 or h < 1:
        raise InvalidArgumentError(f"Empty region: {region}")
    parameters = getattr(model, "parameters", list)()
    flags = [each.requires_grad for each in parameters]
    for each in parameters:
        each.requires_grad = False
    try:
        leaf = Tensor(lr.data, requires_grad=True)
        with Tape() as tape:
            sr, _ = model(leaf)
            sh, sw = sr.shape[2:]
            if x < 0 or y < 0 or x + w > sw or y + h > sh:
                raise InvalidArgumentError(
                    f"Region {region} outside SR {sh}x{sw}"
                )
            tape.backward(reduce(crop(sr, y, x, h, w), "sum"))
    finally:
        for each, flag in zip(parameters, flags):
            each.requires_grad = flag
    grad = np.zeros(leaf.shape) if leaf.grad is None else leaf.grad
    plane = np.sqrt(np.sum(grad[0] * grad[0], axis=0))
    peak = plane.max()
    if peak > 0.0:
        plane = plane / peak
    return AttributionMap(source_id=source_id, region=region, plane=plane)
