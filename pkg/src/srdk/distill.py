"""Distillation losses.

Every feature term compares unit-normalized teacher features with
unit-normalized regressor outputs of the student features. ``l1_mean`` is
the mean absolute value so that alpha1 and alpha2 do not depend on the
tensor size.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from json import dumps
from logging import getLogger
from math import sqrt
from typing import Any

import numpy as np
from cfgenvy import YamlMapping

from .model import Conv2d, FeatureTapSet, Model, pair_taps
from .ops import (
    absolute,
    add,
    avg_pool,
    broadcast_channel,
    dft2,
    l1_mean,
    l2_normalize,
    leaky_relu,
    magnitude,
    mul,
    reduce,
    scale,
    sub,
)
from .tensor import InvalidShapeError, Parameter, Tensor, no_grad
from .utils import ConfigError

logger = getLogger(__name__)

METHODS = ("vanilla", "kd", "fitnet", "lfd", "lsfd")
FEATURE_METHODS = ("fitnet", "lfd", "lsfd")
FFT_MODES = ("split", "magnitude")

RegressorFn = Callable[[Tensor], Tensor]


class RegressorSpec:  # pylint: disable=too-few-public-methods
    """Regressor shape: fitnet is one 1x1 conv, deep is five 3x3 convs."""

    def __init__(  # pylint: disable=too-many-arguments
        self,
        *,
        kind: str,
        in_channels: int,
        out_channels: int,
        depth: int | None = None,
        kernel: int | None = None,
        slope: float | None = None,
    ):
        """__init__."""
        if kind not in ("fitnet", "deep"):
            raise ConfigError(f"Unknown regressor kind: {kind}", "kind")
        fitnet = kind == "fitnet"
        self.kind = kind
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.depth = depth if depth is not None else (1 if fitnet else 5)
        self.kernel = kernel if kernel is not None else (1 if fitnet else 3)
        self.slope = slope if slope is not None else (0.0 if fitnet else 0.1)
        if self.depth < 1:
            raise ConfigError("Regressor depth must be >= 1", "depth")
        if self.kernel not in (1, 3):
            raise ConfigError("Regressor kernel must be 1 or 3", "kernel")
        if not 0.0 <= self.slope < 1.0:
            raise ConfigError("Regressor slope must be in [0, 1)", "slope")

    def as_yaml(self) -> dict[str, Any]:
        """As yaml."""
        return {
            "depth": self.depth,
            "in_channels": self.in_channels,
            "kernel": self.kernel,
            "kind": self.kind,
            "out_channels": self.out_channels,
            "slope": self.slope,
        }


class Regressor:
    """Stack of same-padded convs, each followed by a leaky ReLU."""

    def __init__(self, name: str, spec: RegressorSpec):
        """__init__."""
        self.name = name
        self.spec = spec
        self.layers = [
            Conv2d(
                f"{name}.layer{i}",
                spec.in_channels if i == 1 else spec.out_channels,
                spec.out_channels,
                spec.kernel,
            )
            for i in range(1, spec.depth + 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        """__call__."""
        for layer in self.layers:
            x = leaky_relu(layer(x), self.spec.slope)
        return x

    def parameters(self) -> list[Parameter]:
        """Return parameters in layer order."""
        result = []
        for layer in self.layers:
            result.append(layer.weight)
            result.append(layer.bias)
        return result

    def initialize(self, rng: np.random.Generator) -> None:
        """Uniform(-b, b) weights with b = sqrt(1 / fan_in); zero biases."""
        for layer in self.layers:
            bound = sqrt(1.0 / layer.fan_in)
            layer.weight.data[...] = rng.uniform(
                -bound, bound, layer.weight.shape
            )
            layer.bias.data[...] = 0.0


@dataclass
class LossWeights:
    """Loss weights."""

    alpha1: float = 2000.0
    alpha2: float = 10.0
    fft_weight: float = 1.0
    use_fft: bool = False

    def __post_init__(self):
        """Reject negative weights."""
        for key in ("alpha1", "alpha2", "fft_weight"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0", key)


class DistillConfig(YamlMapping):  # pylint: disable=R0902
    """Distillation method selector and weights."""

    YAML = "!distill_config"

    def __init__(  # pylint: disable=too-many-arguments
        self,
        *,
        method: str = "lsfd",
        alpha1: float = 2000.0,
        alpha2: float = 10.0,
        fft_weight: float = 1.0,
        use_fft: bool = False,
        fft_mode: str = "split",
        sfd_flow: bool = False,
        regressor_depth: int = 5,
        regressor_slope: float = 0.1,
        seed: int = 0,
    ):
        """__init__."""
        self.method = method
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.fft_weight = fft_weight
        self.use_fft = use_fft
        self.fft_mode = fft_mode
        self.sfd_flow = sfd_flow
        self.regressor_depth = regressor_depth
        self.regressor_slope = regressor_slope
        self.seed = seed

    def as_yaml(self) -> dict[str, Any]:
        """As yaml."""
        return {
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "fft_mode": self.fft_mode,
            "fft_weight": self.fft_weight,
            "method": self.method,
            "regressor_depth": self.regressor_depth,
            "regressor_slope": self.regressor_slope,
            "seed": self.seed,
            "sfd_flow": self.sfd_flow,
            "use_fft": self.use_fft,
        }

    def validate(self) -> None:
        """Raise ConfigError on the first invalid field."""
        if self.method not in METHODS:
            raise ConfigError(
                f"method must be one of {METHODS}: {self.method}", "method"
            )
        if self.fft_mode not in FFT_MODES:
            raise ConfigError(
                f"fft_mode must be one of {FFT_MODES}: {self.fft_mode}",
                "fft_mode",
            )
        self.weights()

    def weights(self) -> LossWeights:
        """Return loss weights."""
        return LossWeights(
            alpha1=self.alpha1,
            alpha2=self.alpha2,
            fft_weight=self.fft_weight,
            use_fft=self.use_fft,
        )

    def regressor_spec(self, in_channels: int, out_channels: int):
        """Return the regressor spec for this method, None without one."""
        if self.method not in FEATURE_METHODS:
            return None
        if self.method == "fitnet":
            return RegressorSpec(
                kind="fitnet",
                in_channels=in_channels,
                out_channels=out_channels,
            )
        return RegressorSpec(
            kind="deep",
            in_channels=in_channels,
            out_channels=out_channels,
            depth=self.regressor_depth,
            slope=self.regressor_slope,
        )


@dataclass
class DistillPlan:  # pylint: disable=too-many-instance-attributes
    """Method, weights, tap pairs and one regressor per pair."""

    method: str
    weights: LossWeights
    taps: FeatureTapSet
    regressors: list[Regressor] = field(default_factory=list)
    scale: int = 2
    fft_mode: str = "split"
    sfd_flow: bool = False

    def __post_init__(self):
        """Check the regressor count against the tap pairs."""
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method: {self.method}", "method")
        if len(self.regressors) != len(self.taps):
            raise ConfigError(
                f"{len(self.regressors)} regressors for "
                f"{len(self.taps)} tap pairs",
                "taps",
            )

    @property
    def needs_teacher(self) -> bool:
        """Return whether the loss reads the teacher outputs."""
        return self.method != "vanilla" or self.weights.use_fft

    def parameters(self) -> list[Parameter]:
        """Return every regressor parameter."""
        result = []
        for regressor in self.regressors:
            result.extend(regressor.parameters())
        return result

    def as_yaml(self) -> dict[str, Any]:
        """As yaml."""
        return {
            "fft_mode": self.fft_mode,
            "method": self.method,
            "regressors": [each.spec.as_yaml() for each in self.regressors],
            "scale": self.scale,
            "sfd_flow": self.sfd_flow,
            "taps": self.taps.as_yaml(),
            "weights": {
                "alpha1": self.weights.alpha1,
                "alpha2": self.weights.alpha2,
                "fft_weight": self.weights.fft_weight,
                "use_fft": self.weights.use_fft,
            },
        }


def build_plan(
    config: DistillConfig,
    teacher: Model | None,
    student: Model,
) -> DistillPlan:
    """Pair taps and build regressors seeded from config.seed."""
    config.validate()
    method = config.method
    plan_scale = student.config.scale
    if method not in FEATURE_METHODS:
        return DistillPlan(
            method=method,
            weights=config.weights(),
            taps=FeatureTapSet([]),
            scale=plan_scale,
            fft_mode=config.fft_mode,
            sfd_flow=config.sfd_flow,
        )
    if teacher is None:
        raise ConfigError(f"{method} requires a teacher", "teacher_ckpt")
    taps = pair_taps(teacher, student)
    spec = config.regressor_spec(
        student.config.channels, teacher.config.channels
    )
    rng = np.random.default_rng(config.seed)
    regressors = []
    for i, _ in enumerate(taps, start=1):
        regressor = Regressor(f"regressor{i}", spec)
        regressor.initialize(rng)
        regressors.append(regressor)
    plan = DistillPlan(
        method=method,
        weights=config.weights(),
        taps=taps,
        regressors=regressors,
        scale=plan_scale,
        fft_mode=config.fft_mode,
        sfd_flow=config.sfd_flow,
    )
    logger.info(
        dumps({"key": "distill.plan", "method": "%s", "pairs": "%s"}),
        method,
        len(taps),
    )
    return plan


def _require_same(*tensors: Tensor, op: str) -> None:
    first = tensors[0].shape
    for each in tensors[1:]:
        if each.shape != first:
            raise InvalidShapeError(
                f"{op} shape mismatch: {first} vs {each.shape}."
            )


def sr_loss(sr_t: Tensor, sr_s: Tensor, hr: Tensor) -> Tensor:
    """Average of the teacher-mimic and ground-truth mean L1 terms."""
    _require_same(sr_t, sr_s, hr, op="sr_loss")
    return scale(add(l1_mean(sub(sr_t, sr_s)), l1_mean(sub(hr, sr_s))), 0.5)


def deep_regressor(f_s: Tensor, regressor: RegressorFn) -> Tensor:
    """Map student features into teacher feature space."""
    return regressor(f_s)


def feature_difference(f_t: Tensor, g: Tensor) -> Tensor:
    """Difference of per-sample unit-normalized features."""
    _require_same(f_t, g, op="feature_difference")
    return sub(l2_normalize(f_t), l2_normalize(g))


def lfd_loss(
    f_t: Tensor,
    f_s: Tensor,
    regressor: RegressorFn,
    alpha1: float,
) -> tuple[Tensor, Tensor]:
    """Return alpha1 * l1_mean(D) and the difference D."""
    d = feature_difference(f_t, deep_regressor(f_s, regressor))
    return scale(l1_mean(d), alpha1), d


def sfd_map(
    sr_t: Tensor,
    sr_s: Tensor,
    factor: int,
    channels: int,
    *,
    flow: bool = False,
) -> Tensor:
    """Pooled channel-summed output disagreement broadcast over channels.

    Gradients are blocked unless flow is set.
    """
    _require_same(sr_t, sr_s, op="sfd_map")

    def _map() -> Tensor:
        diff = reduce(absolute(sub(sr_t, sr_s)), "channel_sum")
        return broadcast_channel(avg_pool(diff, factor), channels)

    if flow:
        return _map()
    with no_grad():
        return _map()


def lsfd_loss(d: Tensor, sfd: Tensor, alpha2: float) -> Tensor:
    """Return alpha2 * l1_mean(sfd * D)."""
    return scale(l1_mean(mul(sfd, d)), alpha2)


def fft_loss(sr_t: Tensor, sr_s: Tensor, mode: str = "split") -> Tensor:
    """Mean L1 between spectra.

    split treats real and imaginary planes as independent real planes,
    magnitude compares the complex moduli.
    """
    _require_same(sr_t, sr_s, op="fft_loss")
    re_t, im_t = dft2(sr_t)
    re_s, im_s = dft2(sr_s)
    if mode == "split":
        return scale(
            add(l1_mean(sub(re_t, re_s)), l1_mean(sub(im_t, im_s))), 0.5
        )
    if mode == "magnitude":
        return l1_mean(sub(magnitude(re_t, im_t), magnitude(re_s, im_s)))
    raise ConfigError(f"Unknown fft mode: {mode}", "fft_mode")


@dataclass
class StepOutputs:
    """Forward results of one batch."""

    hr: Tensor
    sr_s: Tensor
    student_taps: Mapping[str, Tensor] = field(default_factory=dict)
    sr_t: Tensor | None = None
    teacher_taps: Mapping[str, Tensor] = field(default_factory=dict)


def _zero() -> Tensor:
    return Tensor(0.0)


def _tap(taps: Mapping[str, Tensor], label: str) -> Tensor:
    try:
        return taps[label]
    except KeyError as e:
        raise ConfigError(f"Missing tap output: {label}", "taps") from e


def _distill_term(plan: DistillPlan, outputs: StepOutputs) -> Tensor:
    if plan.method not in FEATURE_METHODS:
        return _zero()
    assert outputs.sr_t is not None
    weights = plan.weights
    sfd = None
    terms = []
    for (t_label, s_label), regressor in zip(plan.taps, plan.regressors):
        f_t = _tap(outputs.teacher_taps, t_label)
        f_s = _tap(outputs.student_taps, s_label)
        loss, d = lfd_loss(f_t, f_s, regressor, weights.alpha1)
        if plan.method != "lsfd":
            terms.append(loss)
            continue
        if sfd is None or sfd.shape != d.shape:
            sfd = sfd_map(
                outputs.sr_t,
                outputs.sr_s,
                plan.scale,
                d.shape[1],
                flow=plan.sfd_flow,
            )
        terms.append(lsfd_loss(d, sfd, weights.alpha2))
    total = terms[0]
    for each in terms[1:]:
        total = add(total, each)
    return scale(total, 1.0 / len(terms))


def total_loss(
    plan: DistillPlan,
    outputs: StepOutputs,
) -> tuple[Tensor, dict[str, float]]:
    """Return the total loss and its sr, distill and fft terms."""
    if plan.needs_teacher and outputs.sr_t is None:
        raise ConfigError(
            f"{plan.method} needs teacher outputs", "teacher_ckpt"
        )
    if plan.method == "vanilla":
        sr = l1_mean(sub(outputs.hr, outputs.sr_s))
    else:
        assert outputs.sr_t is not None
        sr = sr_loss(outputs.sr_t, outputs.sr_s, outputs.hr)
    distill = _distill_term(plan, outputs)
    if plan.weights.use_fft:
        assert outputs.sr_t is not None
        fft = scale(
            fft_loss(outputs.sr_t, outputs.sr_s, plan.fft_mode),
            plan.weights.fft_weight,
        )
    else:
        fft = _zero()
    total = add(add(sr, distill), fft)
    return total, {
        "distill": distill.item(),
        "fft": fft.item(),
        "sr": sr.item(),
    }
