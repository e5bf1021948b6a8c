"""Images: PNG I/O, bicubic resampling, tensors and synthetic textures."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from logging import getLogger
from math import ceil, cos, pi, sin
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tensor import InvalidShapeError, Tensor
from .utils import ConfigError, SrdkError

logger = getLogger(__name__)

CUBIC_A = -0.5
PATTERNS = ("stripes", "checker", "grid", "moire")


class FormatError(SrdkError, ValueError):
    """Unsupported image format."""


class ImageBuffer:
    """8-bit RGB image stored as an (H, W, 3) uint8 array."""

    def __init__(self, pixels: np.ndarray):
        """__init__."""
        pixels = np.asarray(pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise InvalidShapeError(
                f"ImageBuffer expects (H, W, 3): {pixels.shape}."
            )
        if pixels.dtype != np.uint8:
            if pixels.min() < 0 or pixels.max() > 255:
                raise FormatError("Pixel values outside [0, 255].")
            pixels = pixels.astype(np.uint8)
        self.pixels = np.ascontiguousarray(pixels)

    def __repr__(self) -> str:
        """__repr__."""
        return f"ImageBuffer(width={self.width}, height={self.height})"

    def __eq__(self, other: object) -> bool:
        """__eq__."""
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self) -> int:
        """__hash__."""
        return hash(self.pixels.tobytes())

    @property
    def height(self) -> int:
        """Return height."""
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        """Return width."""
        return int(self.pixels.shape[1])

    def crop(self, top: int, left: int, height: int, width: int):
        """Return a crop."""
        return ImageBuffer(
            self.pixels[top : top + height, left : left + width]
        )

    def crop_to_multiple(self, factor: int) -> ImageBuffer:
        """Crop the bottom and right so both dims divide by factor."""
        h = self.height - self.height % factor
        w = self.width - self.width % factor
        return self.crop(0, 0, h, w)

    def flip(self) -> ImageBuffer:
        """Left-right flip."""
        return ImageBuffer(self.pixels[:, ::-1])


def load_png(path: str | Path) -> ImageBuffer:
    """Load an 8-bit RGB or grayscale PNG."""
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise FormatError(f"Not a PNG: {path}")
            if img.mode == "RGB":
                return ImageBuffer(np.array(img, dtype=np.uint8))
            if img.mode == "L":
                gray = np.array(img, dtype=np.uint8)
                return ImageBuffer(np.repeat(gray[:, :, None], 3, axis=2))
            raise FormatError(f"Unsupported PNG mode {img.mode}: {path}")
    except UnidentifiedImageError as e:
        raise FormatError(f"Unreadable image: {path}") from e


def save_png(img: ImageBuffer, path: str | Path) -> None:
    """Save as an 8-bit RGB PNG."""
    Image.fromarray(img.pixels).save(path, format="PNG")


def save_gray_png(plane: np.ndarray, path: str | Path) -> None:
    """Save a [0, 1] float plane as an 8-bit grayscale PNG."""
    values = np.floor(np.clip(plane, 0.0, 1.0) * 255.0 + 0.5)
    Image.fromarray(values.astype(np.uint8)).save(path, format="PNG")


def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    """Cubic convolution kernel."""
    x = np.abs(x)
    x2 = x * x
    x3 = x2 * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def resample_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Return the (out, in) bicubic resampling matrix.

    Downscaling widens the kernel by the scale factor (antialiasing).
    Source indices outside the image are clamped to the edge.
    """
    ratio = out_size / in_size
    width = 4.0 / ratio if ratio < 1.0 else 4.0
    centers = (np.arange(out_size) + 0.5) / ratio - 0.5
    left = np.floor(centers - width / 2.0).astype(np.int64)
    taps = int(ceil(width)) + 2
    indices = left[:, None] + np.arange(taps)[None, :]
    distance = centers[:, None] - indices
    if ratio < 1.0:
        weights = ratio * cubic(ratio * distance)
    else:
        weights = cubic(distance)
    weights /= weights.sum(axis=1, keepdims=True)
    result = np.zeros((out_size, in_size))
    rows = np.repeat(np.arange(out_size), taps)
    cols = np.clip(indices, 0, in_size - 1).reshape(-1)
    np.add.at(result, (rows, cols), weights.reshape(-1))
    return result


def resize_array(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bicubic resize of an (H, W, C) float array."""
    mh = resample_matrix(a.shape[0], out_h)
    mw = resample_matrix(a.shape[1], out_w)
    rows = np.einsum("oh,hwc->owc", mh, a, optimize=False)
    return np.einsum("pw,owc->opc", mw, rows, optimize=False)


def _quantize(a: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(a, 0.0, 255.0) + 0.5).astype(np.uint8)


def bicubic_downscale(img: ImageBuffer, factor: int) -> ImageBuffer:
    """Downscale by an integer factor; dims must divide by it."""
    if factor < 1 or img.height % factor or img.width % factor:
        raise InvalidShapeError(
            f"{img.height}x{img.width} not divisible by {factor}; crop first."
        )
    if factor == 1:
        return ImageBuffer(img.pixels.copy())
    out = resize_array(
        img.pixels.astype(np.float64),
        img.height // factor,
        img.width // factor,
    )
    return ImageBuffer(_quantize(out))


def bicubic_upscale(img: ImageBuffer, factor: int) -> ImageBuffer:
    """Upscale by an integer factor."""
    out = resize_array(
        img.pixels.astype(np.float64),
        img.height * factor,
        img.width * factor,
    )
    return ImageBuffer(_quantize(out))


def to_tensor(img: ImageBuffer, mean_rgb) -> Tensor:
    """Return pixel / 255 - mean as a (1, 3, H, W) tensor."""
    mean = np.asarray(mean_rgb, dtype=np.float64).reshape(1, 3, 1, 1)
    chw = img.pixels.transpose(2, 0, 1)[None].astype(np.float64)
    return Tensor(chw / 255.0 - mean)


def from_tensor(t: Tensor | np.ndarray, mean_rgb) -> ImageBuffer:
    """Inverse of to_tensor for the first sample; clamps and rounds."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if data.ndim == 4:
        data = data[0]
    mean = np.asarray(mean_rgb, dtype=np.float64).reshape(3, 1, 1)
    values = (data + mean) * 255.0
    return ImageBuffer(_quantize(values.transpose(1, 2, 0)))


@dataclass
class TextureSpec:  # pylint: disable=too-many-instance-attributes
    """Procedural texture description."""

    size: int = 64
    pattern: str = "stripes"
    period: float = 8.0
    angle: float = 0.0
    contrast: float = 1.0
    angle_jitter: float = 0.0
    tint: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])

    def __post_init__(self):
        """Validate."""
        if self.pattern not in PATTERNS:
            raise ConfigError(f"Unknown pattern: {self.pattern}", "pattern")
        if self.period < 2:
            raise ConfigError("period must be >= 2 pixels", "period")
        if not 0.0 <= self.contrast <= 1.0:
            raise ConfigError("contrast must be in [0, 1]", "contrast")
        if self.size < 1:
            raise ConfigError("size must be >= 1", "size")

    def as_dict(self) -> dict[str, Any]:
        """As dict."""
        return asdict(self)


def _square(u: np.ndarray, period: float, phase: float) -> np.ndarray:
    frac = np.mod(u + phase, period) / period
    return np.where(frac < 0.5, 1.0, -1.0)


def synth_texture(spec: TextureSpec, rng: np.random.Generator) -> ImageBuffer:
    """Render a repetitive pattern; rng perturbs phase and angle only."""
    phase_u = rng.uniform(0.0, spec.period)
    phase_v = rng.uniform(0.0, spec.period)
    jitter = rng.uniform(-spec.angle_jitter, spec.angle_jitter)
    theta = (spec.angle + jitter) * pi / 180.0
    y, x = np.mgrid[0 : spec.size, 0 : spec.size].astype(np.float64)
    u = x * cos(theta) + y * sin(theta)
    v = -x * sin(theta) + y * cos(theta)
    if spec.pattern == "stripes":
        s = _square(u, spec.period, phase_u)
    elif spec.pattern == "checker":
        s = _square(u, spec.period, phase_u) * _square(v, spec.period, phase_v)
    elif spec.pattern == "grid":
        on_u = np.mod(u + phase_u, spec.period) < spec.period / 4.0
        on_v = np.mod(v + phase_v, spec.period) < spec.period / 4.0
        s = np.where(on_u | on_v, 1.0, -1.0)
    else:
        # two gratings with nearby periods beat into a moire envelope
        second = spec.period * 1.1
        s = 0.5 * (
            np.cos(2.0 * pi * (u + phase_u) / spec.period)
            + np.cos(2.0 * pi * (u * cos(0.1) + v * sin(0.1)) / second)
        )
    tint = np.asarray(spec.tint, dtype=np.float64).reshape(1, 1, 3)
    values = 127.5 + spec.contrast * 127.5 * s[:, :, None] * tint
    return ImageBuffer(
        np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)
    )


def channel_means(images) -> list[float]:
    """Per-channel mean on the [0, 1] scale."""
    total = np.zeros(3)
    count = 0
    for img in images:
        total += img.pixels.reshape(-1, 3).sum(axis=0) / 255.0
        count += img.height * img.width
    if count == 0:
        return [0.0, 0.0, 0.0]
    return [float(each) for each in total / count]


