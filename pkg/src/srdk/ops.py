"""Differentiable ops.

All ops take and return ``Tensor``. There is no implicit broadcasting:
shapes must match exactly, and the only broadcasts are the explicit
``broadcast_channel`` and ``broadcast_spatial`` ops.
"""

from __future__ import annotations

from collections.abc import Generator
from contextlib import contextmanager
from logging import getLogger

import numpy as np

from .tensor import DegenerateInputError, InvalidShapeError, Tensor, record

logger = getLogger(__name__)

NORM_EPSILON = 1e-12

_STRICT = [False]


def set_strict(value: bool) -> None:
    """Toggle strict single-threaded contractions."""
    _STRICT[0] = value


def is_strict() -> bool:
    """Return whether strict mode is on."""
    return _STRICT[0]


@contextmanager
def strict() -> Generator[None]:
    """Evaluate contractions with einsum loops instead of BLAS."""
    previous = _STRICT[0]
    _STRICT[0] = True
    try:
        yield
    finally:
        _STRICT[0] = previous


def _contract(subscripts: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Contract two operands; BLAS dispatch is disabled in strict mode."""
    return np.einsum(subscripts, a, b, optimize=not _STRICT[0])


def _require_rank(x: Tensor, rank: int, op: str) -> None:
    if x.data.ndim != rank:
        raise InvalidShapeError(
            f"{op} expects rank {rank}, got shape {x.shape}."
        )


def _require_same(x: Tensor, y: Tensor, op: str) -> None:
    if x.shape != y.shape:
        raise InvalidShapeError(
            f"{op} shape mismatch: {x.shape} vs {y.shape}."
        )


def conv2d(x: Tensor, w: Tensor, b: Tensor, pad: int | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero padding.

    x is (N, Cin, H, W), w is (Cout, Cin, k, k), b is (Cout,).
    The default pad (k - 1) / 2 keeps the spatial size.
    """
    _require_rank(x, 4, "conv2d")
    _require_rank(w, 4, "conv2d")
    n, cin, h, wd = x.shape
    cout, wcin, k, k2 = w.shape
    if wcin != cin:
        raise InvalidShapeError(
            f"conv2d input has {cin} channels, kernel expects {wcin}."
        )
    if k != k2:
        raise InvalidShapeError(f"conv2d kernel must be square: {w.shape}.")
    if b.shape != (cout,):
        raise InvalidShapeError(
            f"conv2d bias shape {b.shape} != ({cout},)."
        )
    if pad is None:
        pad = (k - 1) // 2
    ho = h + 2 * pad - k + 1
    wo = wd + 2 * pad - k + 1
    if ho < 1 or wo < 1:
        raise InvalidShapeError(f"conv2d output would be empty for {x.shape}.")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, cout, ho, wo))
    for i in range(k):
        for j in range(k):
            out += _contract(
                "nchw,oc->nohw",
                xp[:, :, i : i + ho, j : j + wo],
                w.data[:, :, i, j],
            )
    out += b.data[None, :, None, None]

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        for i in range(k):
            for j in range(k):
                gw[:, :, i, j] = _contract(
                    "nohw,nchw->oc", g, xp[:, :, i : i + ho, j : j + wo]
                )
                gxp[:, :, i : i + ho, j : j + wo] += _contract(
                    "nohw,oc->nchw", g, w.data[:, :, i, j]
                )
        gx = gxp[:, :, pad : pad + h, pad : pad + wd]
        gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return record("conv2d", (x, w, b), out, vjp)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """Elementwise max(x, slope * x); the subgradient at 0 is slope."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"Slope must be in [0, 1), got {slope}.")
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data)

    def vjp(g):
        return (np.where(positive, g, slope * g),)

    return record("leaky_relu", (x,), out, vjp)


def relu(x: Tensor) -> Tensor:
    """Plain ReLU."""
    return leaky_relu(x, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic sigmoid."""
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return record("sigmoid", (x,), out, vjp)


def absolute(x: Tensor) -> Tensor:
    """Elementwise |x|; the subgradient at 0 is 0."""
    sign = np.sign(x.data)

    def vjp(g):
        return (g * sign,)

    return record("absolute", (x,), np.abs(x.data), vjp)


def pointwise(x: Tensor, y: Tensor | float, kind: str) -> Tensor:
    """Elementwise add, sub, mul of equal shapes, or scale by a scalar."""
    if kind == "scale":
        if isinstance(y, Tensor):
            raise InvalidShapeError("scale expects a scalar factor.")
        factor = float(y)

        def vjp_scale(g):
            return (g * factor,)

        return record("scale", (x,), x.data * factor, vjp_scale)

    if not isinstance(y, Tensor):
        raise InvalidShapeError(f"{kind} expects a tensor operand.")
    _require_same(x, y, kind)
    if kind == "add":
        return record("add", (x, y), x.data + y.data, lambda g: (g, g))
    if kind == "sub":
        return record("sub", (x, y), x.data - y.data, lambda g: (g, -g))
    if kind == "mul":
        xd, yd = x.data, y.data
        return record("mul", (x, y), xd * yd, lambda g: (g * yd, g * xd))
    raise ValueError(f"Unknown pointwise kind: {kind}.")


def add(x: Tensor, y: Tensor) -> Tensor:
    """Add."""
    return pointwise(x, y, "add")


def sub(x: Tensor, y: Tensor) -> Tensor:
    """Subtract."""
    return pointwise(x, y, "sub")


def mul(x: Tensor, y: Tensor) -> Tensor:
    """Multiply."""
    return pointwise(x, y, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    """Scale by a constant."""
    return pointwise(x, factor, "scale")


def avg_pool(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k mean pooling with stride k."""
    _require_rank(x, 4, "avg_pool")
    n, c, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise InvalidShapeError(
            f"avg_pool window {k} does not divide {h}x{w}."
        )
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def vjp(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3)
        return (gx / (k * k),)

    return record("avg_pool", (x,), out, vjp)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool to (N, C, 1, 1)."""
    _require_rank(x, 4, "spatial_mean")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def vjp(g):
        return (np.broadcast_to(g / (h * w), (n, c, h, w)).copy(),)

    return record("spatial_mean", (x,), out, vjp)


def broadcast_channel(x: Tensor, c: int) -> Tensor:
    """Repeat a single-channel tensor over c channels."""
    _require_rank(x, 4, "broadcast_channel")
    if x.shape[1] != 1:
        raise InvalidShapeError(
            f"broadcast_channel expects 1 channel, got {x.shape[1]}."
        )
    out = np.repeat(x.data, c, axis=1)

    def vjp(g):
        return (g.sum(axis=1, keepdims=True),)

    return record("broadcast_channel", (x,), out, vjp)


def broadcast_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Repeat a (N, C, 1, 1) tensor over an h x w grid."""
    _require_rank(x, 4, "broadcast_spatial")
    if x.shape[2:] != (1, 1):
        raise InvalidShapeError(
            f"broadcast_spatial expects 1x1 planes, got {x.shape}."
        )
    n, c = x.shape[:2]
    out = np.broadcast_to(x.data, (n, c, h, w)).copy()

    def vjp(g):
        return (g.sum(axis=(2, 3), keepdims=True),)

    return record("broadcast_spatial", (x,), out, vjp)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, crr, h, w = a.shape
    c = crr // (r * r)
    a = a.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return a.reshape(n, c, h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    a = a.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)
    return a.reshape(n, c * r * r, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange (N, r*r*C, H, W) into (N, C, r*H, r*W)."""
    _require_rank(x, 4, "pixel_shuffle")
    if r < 1 or x.shape[1] % (r * r):
        raise InvalidShapeError(
            f"pixel_shuffle channels {x.shape[1]} not divisible by {r * r}."
        )

    def vjp(g):
        return (_unshuffle(g, r),)

    return record("pixel_shuffle", (x,), _shuffle(x.data, r), vjp)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of pixel_shuffle."""
    _require_rank(x, 4, "pixel_unshuffle")
    if r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise InvalidShapeError(
            f"pixel_unshuffle factor {r} does not divide {x.shape[2:]}."
        )

    def vjp(g):
        return (_shuffle(g, r),)

    return record("pixel_unshuffle", (x,), _unshuffle(x.data, r), vjp)


def l2_normalize(x: Tensor) -> Tensor:
    """Divide each sample by its L2 norm over C*H*W."""
    n = x.shape[0]
    flat = x.data.reshape(n, -1)
    norms = np.sqrt(np.einsum("ni,ni->n", flat, flat))
    if np.any(norms <= NORM_EPSILON):
        raise DegenerateInputError(
            f"l2_normalize sample norm <= {NORM_EPSILON}: {norms.min()}."
        )
    out_flat = flat / norms[:, None]

    def vjp(g):
        gf = g.reshape(n, -1)
        dots = np.einsum("ni,ni->n", gf, out_flat)
        gx = (gf - out_flat * dots[:, None]) / norms[:, None]
        return (gx.reshape(x.shape),)

    return record("l2_normalize", (x,), out_flat.reshape(x.shape), vjp)


def reduce(x: Tensor, kind: str) -> Tensor:
    """Reduce by l1_mean, mean, sum (to scalars) or channel_sum."""
    shape = x.shape
    numel = x.numel
    if kind == "l1_mean":
        sign = np.sign(x.data)

        def vjp_l1(g):
            return (g * sign / numel,)

        out = np.array(np.abs(x.data).mean())
        return record("l1_mean", (x,), out, vjp_l1)
    if kind == "mean":

        def vjp_mean(g):
            return (np.full(shape, g / numel),)

        return record("mean", (x,), np.array(x.data.mean()), vjp_mean)
    if kind == "sum":

        def vjp_sum(g):
            return (np.full(shape, g * 1.0),)

        return record("sum", (x,), np.array(x.data.sum()), vjp_sum)
    if kind == "channel_sum":
        _require_rank(x, 4, "channel_sum")
        if shape[1] != 3:
            raise InvalidShapeError(
                f"channel_sum expects 3 channels, got {shape[1]}."
            )

        def vjp_channel(g):
            return (np.repeat(g, 3, axis=1),)

        out = x.data.sum(axis=1, keepdims=True)
        return record("channel_sum", (x,), out, vjp_channel)
    raise ValueError(f"Unknown reduce kind: {kind}.")


def l1_mean(x: Tensor) -> Tensor:
    """Mean absolute value."""
    return reduce(x, "l1_mean")


def dft2(x: Tensor) -> tuple[Tensor, Tensor]:
    """2-D DFT of every (sample, channel) plane as (real, imaginary)."""
    _require_rank(x, 4, "dft2")
    h, w = x.shape[2:]
    spectrum = np.fft.fft2(x.data, axes=(2, 3))
    size = h * w

    def vjp_re(g):
        return (np.fft.ifft2(g, axes=(2, 3)).real * size,)

    def vjp_im(g):
        return (np.fft.ifft2(1j * g, axes=(2, 3)).real * size,)

    re = record("dft2.re", (x,), spectrum.real.copy(), vjp_re)
    im = record("dft2.im", (x,), spectrum.imag.copy(), vjp_im)
    return re, im


def magnitude(re: Tensor, im: Tensor) -> Tensor:
    """Complex modulus sqrt(re^2 + im^2); the subgradient at 0 is 0."""
    _require_same(re, im, "magnitude")
    out = np.hypot(re.data, im.data)
    safe = np.where(out > 0, out, 1.0)
    zero = out == 0

    def vjp(g):
        gre = np.where(zero, 0.0, g * re.data / safe)
        gim = np.where(zero, 0.0, g * im.data / safe)
        return gre, gim

    return record("magnitude", (re, im), out, vjp)


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Spatial crop of (N, C, H, W)."""
    _require_rank(x, 4, "crop")
    h, w = x.shape[2:]
    if (
        height < 1
        or width < 1
        or top < 0
        or left < 0
        or top + height > h
        or left + width > w
    ):
        raise InvalidShapeError(
            f"crop ({top}, {left}, {height}, {width}) outside {h}x{w}."
        )
    out = x.data[:, :, top : top + height, left : left + width].copy()

    def vjp(g):
        gx = np.zeros(x.shape)
        gx[:, :, top : top + height, left : left + width] = g
        return (gx,)

    return record("crop", (x,), out, vjp)


def flip(x: Tensor) -> Tensor:
    """Left-right flip."""
    _require_rank(x, 4, "flip")

    def vjp(g):
        return (g[..., ::-1].copy(),)

    return record("flip", (x,), x.data[..., ::-1].copy(), vjp)
