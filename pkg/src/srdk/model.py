"""Tiny EDSR-like and RCAN-like super-resolution networks."""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from json import dumps
from logging import getLogger
from math import sqrt
from typing import Any

import numpy as np
from cfgenvy import YamlMapping

from .ops import (
    add,
    broadcast_spatial,
    conv2d,
    mul,
    pixel_shuffle,
    relu,
    scale,
    sigmoid,
    spatial_mean,
)
from .tensor import InvalidShapeError, Parameter, Tensor
from .utils import ConfigError, round_half_up

logger = getLogger(__name__)

VARIANTS = ("edsr_like", "rcan_like")
SCALES = (2, 3, 4)
EDSR_TAPS = 4


class ModelConfig(YamlMapping):  # pylint: disable=too-many-instance-attributes
    """Model configuration."""

    YAML = "!model_config"

    def __init__(  # pylint: disable=too-many-arguments
        self,
        *,
        variant: str = "rcan_like",
        channels: int = 64,
        n_blocks: int = 20,
        n_groups: int = 10,
        scale: int = 2,
        residual_scaling: float | None = None,
        reduction: int = 16,
        seed: int = 0,
        taps: Sequence[str] | None = None,
    ):
        """__init__."""
        self.variant = variant
        self.channels = channels
        self.n_blocks = n_blocks
        self.n_groups = n_groups
        self.scale = scale
        if residual_scaling is None:
            residual_scaling = 0.1 if variant == "edsr_like" else 1.0
        self.residual_scaling = residual_scaling
        self.reduction = reduction
        self.seed = seed
        self.taps = None if taps is None else list(taps)

    def __eq__(self, other: object) -> bool:
        """__eq__."""
        if not isinstance(other, ModelConfig):
            return NotImplemented
        return self.as_yaml() == other.as_yaml()

    def __hash__(self) -> int:
        """__hash__."""
        return hash(dumps(self.as_yaml(), sort_keys=True))

    def as_yaml(self) -> dict[str, Any]:
        """As yaml."""
        return {
            "channels": self.channels,
            "n_blocks": self.n_blocks,
            "n_groups": self.n_groups,
            "reduction": self.reduction,
            "residual_scaling": self.residual_scaling,
            "scale": self.scale,
            "seed": self.seed,
            "taps": self.taps,
            "variant": self.variant,
        }

    def validate(self) -> None:
        """Raise ConfigError on the first invalid field."""
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"variant must be one of {VARIANTS}: {self.variant}",
                "variant",
            )
        if self.scale not in SCALES:
            raise ConfigError(
                f"scale must be one of {SCALES}: {self.scale}", "scale"
            )
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be >= 1", "n_blocks")
        if self.variant == "rcan_like":
            if self.n_groups < 1:
                raise ConfigError("n_groups must be >= 1", "n_groups")
            if self.reduction < 1 or self.channels < self.reduction:
                raise ConfigError(
                    f"channels {self.channels} < reduction {self.reduction}",
                    "reduction",
                )
        if self.channels < 1:
            raise ConfigError("channels must be >= 1", "channels")
        if self.taps is not None:
            known = set(self.body_labels())
            for label in self.taps:
                if label not in known:
                    raise ConfigError(f"Unknown tap: {label}", "taps")

    def body_labels(self) -> list[str]:
        """Return the label of every trunk layer output."""
        if self.variant == "rcan_like":
            return [f"group_out/{i}" for i in range(1, self.n_groups + 1)]
        return [f"block_out/{i}" for i in range(1, self.n_blocks + 1)]

    def tap_points(self) -> list[str]:
        """Return the configured or default tap labels in depth order."""
        labels = self.body_labels()
        if self.taps is not None:
            return [each for each in labels if each in set(self.taps)]
        if self.variant == "rcan_like":
            return labels
        n = min(EDSR_TAPS, self.n_blocks)
        indices = sorted(
            {round_half_up(j * self.n_blocks / n) for j in range(1, n + 1)}
        )
        return [labels[i - 1] for i in indices]


class Conv2d:
    """Conv layer holding its weight and bias."""

    def __init__(self, name: str, cin: int, cout: int, kernel: int):
        """__init__."""
        self.name = name
        self.kernel = kernel
        self.weight = Parameter(
            np.zeros((cout, cin, kernel, kernel)), name=f"{name}.weight"
        )
        self.bias = Parameter(np.zeros(cout), name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        """__call__."""
        return conv2d(x, self.weight, self.bias)

    @property
    def fan_in(self) -> int:
        """Return fan in."""
        _, cin, k, _ = self.weight.shape
        return cin * k * k

    def convs(self) -> Iterator[Conv2d]:
        """Yield self."""
        yield self

    def multi_adds(self, h: int, w: int) -> int:
        """Return multiply-adds for an h x w output."""
        return int(self.weight.data.size) * h * w


class ChannelAttention:
    """Squeeze-excite gate: pool, reduce, ReLU, expand, sigmoid, rescale."""

    def __init__(self, name: str, channels: int, reduction: int):
        """__init__."""
        if reduction < 1 or channels % reduction:
            raise ConfigError(
                f"channels {channels} not divisible by reduction {reduction}",
                "reduction",
            )
        self.reduction = reduction
        self.down = Conv2d(f"{name}.down", channels, channels // reduction, 1)
        self.up = Conv2d(f"{name}.up", channels // reduction, channels, 1)

    def __call__(self, x: Tensor) -> Tensor:
        """__call__."""
        h, w = x.shape[2:]
        gate = sigmoid(self.up(relu(self.down(spatial_mean(x)))))
        return mul(x, broadcast_spatial(gate, h, w))

    def convs(self) -> Iterator[Conv2d]:
        """Yield convs."""
        yield self.down
        yield self.up

    def multi_adds(self, h: int, w: int) -> int:  # pylint: disable=W0613
        """Return multiply-adds; both convs run on pooled 1x1 planes."""
        return self.down.multi_adds(1, 1) + self.up.multi_adds(1, 1)


def channel_attention(x: Tensor, layer: ChannelAttention) -> Tensor:
    """Apply a channel attention layer."""
    if x.shape[1] != layer.up.weight.shape[0]:
        raise InvalidShapeError(
            f"channel_attention expects {layer.up.weight.shape[0]} channels."
        )
    return layer(x)


class ResBlock:
    """EDSR block: conv, ReLU, conv, scaled, plus identity."""

    def __init__(self, name: str, channels: int, residual_scaling: float):
        """__init__."""
        self.conv1 = Conv2d(f"{name}.conv1", channels, channels, 3)
        self.conv2 = Conv2d(f"{name}.conv2", channels, channels, 3)
        self.residual_scaling = residual_scaling

    def __call__(self, x: Tensor) -> Tensor:
        """__call__."""
        r = self.conv2(relu(self.conv1(x)))
        if self.residual_scaling != 1.0:
            r = scale(r, self.residual_scaling)
        return add(x, r)

    def convs(self) -> Iterator[Conv2d]:
        """Yield convs."""
        yield self.conv1
        yield self.conv2

    def multi_adds(self, h: int, w: int) -> int:
        """Return multiply-adds."""
        return self.conv1.multi_adds(h, w) + self.conv2.multi_adds(h, w)


class RCAB(ResBlock):
    """Residual channel attention block."""

    def __init__(
        self,
        name: str,
        channels: int,
        reduction: int,
        residual_scaling: float = 1.0,
    ):
        """__init__."""
        super().__init__(name, channels, residual_scaling)
        self.attention = ChannelAttention(
            f"{name}.attention", channels, reduction
        )

    def __call__(self, x: Tensor) -> Tensor:
        """__call__."""
        r = self.attention(self.conv2(relu(self.conv1(x))))
        if self.residual_scaling != 1.0:
            r = scale(r, self.residual_scaling)
        return add(x, r)

    def convs(self) -> Iterator[Conv2d]:
        """Yield convs."""
        yield from super().convs()
        yield from self.attention.convs()

    def multi_adds(self, h: int, w: int) -> int:
        """Return multiply-adds."""
        return super().multi_adds(h, w) + self.attention.multi_adds(h, w)


class ResidualGroup:
    """RCABs followed by a conv, with a short group skip."""

    def __init__(  # pylint: disable=too-many-arguments
        self,
        name: str,
        channels: int,
        n_blocks: int,
        reduction: int,
        residual_scaling: float,
    ):
        """__init__."""
        self.blocks = [
            RCAB(f"{name}.block{i}", channels, reduction, residual_scaling)
            for i in range(1, n_blocks + 1)
        ]
        self.conv = Conv2d(f"{name}.conv", channels, channels, 3)

    def __call__(self, x: Tensor) -> Tensor:
        """__call__."""
        r = x
        for block in self.blocks:
            r = block(r)
        return add(x, self.conv(r))

    def convs(self) -> Iterator[Conv2d]:
        """Yield convs."""
        for block in self.blocks:
            yield from block.convs()
        yield self.conv

    def multi_adds(self, h: int, w: int) -> int:
        """Return multiply-adds."""
        result = self.conv.multi_adds(h, w)
        for block in self.blocks:
            result += block.multi_adds(h, w)
        return result


class Upsampler:
    """Conv to r*r*C then pixel shuffle; x4 is two x2 stages."""

    def __init__(self, name: str, channels: int, factor: int):
        """__init__."""
        factors = [2, 2] if factor == 4 else [factor]
        self.stages = [
            (Conv2d(f"{name}.stage{i}", channels, r * r * channels, 3), r)
            for i, r in enumerate(factors, start=1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        """__call__."""
        for conv, r in self.stages:
            x = pixel_shuffle(conv(x), r)
        return x

    def convs(self) -> Iterator[Conv2d]:
        """Yield convs."""
        for conv, _ in self.stages:
            yield conv

    def multi_adds(self, h: int, w: int) -> int:
        """Return multiply-adds."""
        result = 0
        for conv, r in self.stages:
            result += conv.multi_adds(h, w)
            h, w = h * r, w * r
        return result


class Model:
    """Super-resolution network with declared feature taps."""

    def __init__(self, config: ModelConfig):
        """__init__."""
        config.validate()
        self.config = config
        c = config.channels
        self.head = Conv2d("head", 3, c, 3)
        self.body: list[ResBlock | ResidualGroup]
        if config.variant == "rcan_like":
            self.body = [
                ResidualGroup(
                    f"group{i}",
                    c,
                    config.n_blocks,
                    config.reduction,
                    config.residual_scaling,
                )
                for i in range(1, config.n_groups + 1)
            ]
        else:
            self.body = [
                ResBlock(f"block{i}", c, config.residual_scaling)
                for i in range(1, config.n_blocks + 1)
            ]
        self.tail = Conv2d("tail", c, c, 3)
        self.upsampler = Upsampler("upsampler", c, config.scale)
        self.final = Conv2d("final", c, 3, 3)
        self.body_labels = config.body_labels()
        self.tap_points = config.tap_points()
        self._taps = set(self.tap_points)

    def __call__(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """__call__."""
        return self.forward(x)

    def forward(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """Return the SR image and the tap features in tap order."""
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise InvalidShapeError(f"Model expects (N, 3, h, w): {x.shape}.")
        h = self.head(x)
        r = h
        taps = []
        for label, layer in zip(self.body_labels, self.body):
            r = layer(r)
            if label in self._taps:
                taps.append(r)
        r = add(self.tail(r), h)
        return self.final(self.upsampler(r)), taps

    def convs(self) -> Iterator[Conv2d]:
        """Yield every conv in definition order."""
        yield self.head
        for layer in self.body:
            yield from layer.convs()
        yield self.tail
        yield from self.upsampler.convs()
        yield self.final

    def parameters(self) -> list[Parameter]:
        """Return parameters in definition order."""
        result = []
        for conv in self.convs():
            result.append(conv.weight)
            result.append(conv.bias)
        return result

    def named_parameters(self) -> dict[str, Parameter]:
        """Return parameters by name."""
        return {each.name: each for each in self.parameters()}  # type: ignore

    @property
    def parameter_count(self) -> int:
        """Return the number of scalar parameters."""
        return sum(each.data.size for each in self.parameters())

    def multi_adds(self, h: int, w: int) -> int:
        """Return multiply-adds for one (3, h, w) input."""
        c = self.config.channels
        result = self.head.multi_adds(h, w) + self.tail.multi_adds(h, w)
        for layer in self.body:
            result += layer.multi_adds(h, w)
        result += self.upsampler.multi_adds(h, w)
        s = self.config.scale
        result += self.final.multi_adds(h * s, w * s)
        logger.debug("multi_adds for %s channels: %s", c, result)
        return result

    def freeze(self) -> None:
        """Block gradients into every parameter."""
        for each in self.parameters():
            each.requires_grad = False

    def state(self) -> dict[str, np.ndarray]:
        """Return a copy of the parameter values by name."""
        return {
            name: each.data.copy()
            for name, each in self.named_parameters().items()
        }

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Copy values into parameters; names and shapes must match."""
        named = self.named_parameters()
        missing = set(named) - set(state)
        if missing:
            raise ConfigError(f"Missing parameters: {sorted(missing)}")
        for name, each in named.items():
            value = state[name]
            if value.shape != each.shape:
                raise InvalidShapeError(
                    f"{name}: {value.shape} != {each.shape}."
                )
            each.data[...] = value


def init_params(model: Model, seed: int) -> None:
    """Uniform(-b, b) weights with b = sqrt(1 / fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    for conv in model.convs():
        bound = sqrt(1.0 / conv.fan_in)
        conv.weight.data[...] = rng.uniform(-bound, bound, conv.weight.shape)
        conv.bias.data[...] = 0.0


def build_model(config: ModelConfig, *, initialize: bool = True) -> Model:
    """Build a model, initialized from config.seed unless told otherwise."""
    model = Model(config)
    if initialize:
        init_params(model, config.seed)
    return model


def model_stats(config: ModelConfig, h: int = 480, w: int = 640) -> dict:
    """Return parameter count and multiply-adds for a 3 x h x w input."""
    model = build_model(config, initialize=False)
    return {
        "multi_adds": model.multi_adds(h, w),
        "parameters": model.parameter_count,
    }


class FeatureTapSet:
    """Pairs of (teacher tap label, student tap label)."""

    def __init__(self, pairs: Sequence[tuple[str, str]]):
        """__init__."""
        self.pairs = [tuple(each) for each in pairs]

    def __iter__(self):
        """__iter__."""
        return iter(self.pairs)

    def __len__(self) -> int:
        """__len__."""
        return len(self.pairs)

    def __eq__(self, other: object) -> bool:
        """__eq__."""
        if not isinstance(other, FeatureTapSet):
            return NotImplemented
        return self.pairs == other.pairs

    def as_yaml(self) -> list[list[str]]:
        """As yaml."""
        return [list(each) for each in self.pairs]


def pair_taps(teacher: Model, student: Model) -> FeatureTapSet:
    """Pair student tap j with teacher tap round(j * T / S), 1-indexed."""
    if teacher.config.scale != student.config.scale:
        raise ConfigError(
            f"Teacher scale {teacher.config.scale} != student scale "
            f"{student.config.scale}",
            "scale",
        )
    t_taps = teacher.tap_points
    s_taps = student.tap_points
    if not t_taps or not s_taps:
        raise ConfigError("Teacher and student must declare taps", "taps")
    pairs = []
    for j, label in enumerate(s_taps, start=1):
        i = round_half_up(j * len(t_taps) / len(s_taps))
        if i < 1:
            raise ConfigError(
                f"No teacher tap for student tap {label}", "taps"
            )
        pairs.append((t_taps[i - 1], label))
    return FeatureTapSet(pairs)
