"""Finite-difference gradient checks."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from json import dumps
from logging import getLogger

import numpy as np

from . import ops
from .tensor import Parameter, Tape, Tensor, no_grad

logger = getLogger(__name__)

DENOMINATOR_FLOOR = 1e-8

# inputs sit at least 0.1 from any kink, so a wider step stays on one side
OP_EPS = 1e-4

# covers every bias and 1x1 attention entry of the toy chain
CHAIN_SAMPLES = 16

CHECKED = dumps({"key": "gradcheck.op", "op": "%s", "max_rel_err": "%s"})


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    """Return max |a - n| / max(|a|, |n|, 1e-8)."""
    denominator = np.maximum(
        np.maximum(np.abs(a), np.abs(n)), DENOMINATOR_FLOOR
    )
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / denominator))


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-6,
) -> float:
    """Compare the tape gradient of scalar f at x with central differences."""
    leaf = Tensor(x.data, requires_grad=True)
    with Tape() as tape:
        loss = f(leaf)
        tape.backward(loss)
    analytic = (
        np.zeros(leaf.shape) if leaf.grad is None else leaf.grad.copy()
    )

    numeric = np.empty(leaf.shape)
    data = leaf.data.copy()
    flat = data.reshape(-1)
    out = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            plus = f(Tensor(data)).item()
            flat[i] = saved - eps
            minus = f(Tensor(data)).item()
            flat[i] = saved
            out[i] = (plus - minus) / (2.0 * eps)
    return relative_error(analytic, numeric)


def grad_check_parameters(
    f: Callable[[], Tensor],
    parameters: Sequence[Parameter],
    *,
    eps: float = 1e-6,
    samples: int | None = 3,
    seed: int = 0,
) -> float:
    """Check entries of every parameter against central differences.

    Up to samples entries per parameter are drawn without replacement;
    None checks every entry.
    """
    for each in parameters:
        each.zero_grad()
    with Tape() as tape:
        tape.backward(f())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for each in parameters:
        assert each.grad is not None
        flat = each.data.reshape(-1)
        grad = each.grad.reshape(-1)
        if samples is None or samples >= flat.size:
            indices = np.arange(flat.size)
        else:
            indices = rng.choice(flat.size, size=samples, replace=False)
        count = indices.size
        analytic = grad[indices].copy()
        numeric = np.empty(count)
        with no_grad():
            for j, i in enumerate(indices):
                saved = flat[i]
                flat[i] = saved + eps
                plus = f().item()
                flat[i] = saved - eps
                minus = f().item()
                flat[i] = saved
                numeric[j] = (plus - minus) / (2.0 * eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def away_from_kinks(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    margin: float = 0.1,
) -> np.ndarray:
    """Random values with |x| >= margin."""
    magnitude = rng.uniform(margin, 1.0, shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return magnitude * sign


def projected(
    op: Callable[[Tensor], Tensor],
    rng: np.random.Generator,
) -> Callable[[Tensor], Tensor]:
    """Return x -> sum(op(x) * R) for a fixed random R with |R| >= 0.5."""
    cache: dict[str, Tensor] = {}

    def f(x: Tensor) -> Tensor:
        y = op(x)
        if "r" not in cache:
            cache["r"] = Tensor(away_from_kinks(rng, y.shape, 0.5))
        if y.shape == ():
            return ops.scale(y, float(cache["r"].item()))
        return ops.reduce(ops.mul(y, cache["r"]), "sum")

    return f


def _check(
    op: Callable[[Tensor], Tensor],
    x: Tensor,
    rng: np.random.Generator,
) -> float:
    return grad_check(projected(op, rng), x, OP_EPS)


def _check_conv2d(rng: np.random.Generator) -> float:
    x = rng.normal(size=(2, 3, 5, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    wt, bt, xt = Tensor(w), Tensor(b), Tensor(x)
    return max(
        _check(lambda t: ops.conv2d(t, wt, bt), xt, rng),
        _check(lambda t: ops.conv2d(xt, t, bt), wt, rng),
        _check(lambda t: ops.conv2d(xt, wt, t), bt, rng),
    )


def _unary(
    op: Callable[[Tensor], Tensor],
    shape: tuple[int, ...] = (2, 4, 8, 8),
) -> Callable[[np.random.Generator], float]:
    def check(rng: np.random.Generator) -> float:
        return _check(op, Tensor(away_from_kinks(rng, shape)), rng)

    return check


def _binary(kind: str) -> Callable[[np.random.Generator], float]:
    def check(rng: np.random.Generator) -> float:
        x = Tensor(away_from_kinks(rng, (2, 4, 8, 8)))
        y = Tensor(away_from_kinks(rng, (2, 4, 8, 8)))
        return max(
            _check(lambda t: ops.pointwise(t, y, kind), x, rng),
            _check(lambda t: ops.pointwise(x, t, kind), y, rng),
        )

    return check


def _check_magnitude(rng: np.random.Generator) -> float:
    re = Tensor(away_from_kinks(rng, (2, 4, 8, 8)))
    im = Tensor(away_from_kinks(rng, (2, 4, 8, 8)))
    return max(
        _check(lambda t: ops.magnitude(t, im), re, rng),
        _check(lambda t: ops.magnitude(re, t), im, rng),
    )


def _check_channel_attention(rng: np.random.Generator) -> float:
    # pylint: disable=import-outside-toplevel
    from .model import ChannelAttention

    layer = ChannelAttention("attention", 4, 2)
    for conv in layer.convs():
        conv.weight.data[...] = rng.normal(size=conv.weight.shape)
        conv.bias.data[...] = rng.normal(size=conv.bias.shape)
    x = Tensor(rng.normal(size=(2, 4, 8, 8)))
    return grad_check(projected(layer, rng), x)


def _check_deep_regressor(rng: np.random.Generator) -> float:
    # pylint: disable=import-outside-toplevel
    from .distill import Regressor, RegressorSpec

    regressor = Regressor(
        "regressor",
        RegressorSpec(kind="deep", in_channels=2, out_channels=3),
    )
    regressor.initialize(rng)
    x = Tensor(rng.normal(size=(1, 2, 6, 6)))
    return grad_check(projected(regressor, rng), x)


def _check_chain(rng: np.random.Generator) -> float:
    """Student conv, tap, deep regressor, lsfd and sr losses."""
    # pylint: disable=import-outside-toplevel
    from .distill import DistillConfig, StepOutputs, build_plan, total_loss
    from .model import ModelConfig, build_model

    teacher = build_model(
        ModelConfig(
            variant="rcan_like",
            channels=8,
            n_blocks=1,
            n_groups=2,
            reduction=4,
            seed=1,
        )
    )
    teacher.freeze()
    student = build_model(
        ModelConfig(
            variant="rcan_like",
            channels=4,
            n_blocks=1,
            n_groups=2,
            reduction=2,
            seed=2,
        )
    )
    plan = build_plan(DistillConfig(method="lsfd"), teacher, student)
    lr = Tensor(rng.uniform(-0.5, 0.5, (1, 3, 4, 4)))
    hr = Tensor(rng.uniform(-0.5, 0.5, (1, 3, 8, 8)))
    with no_grad():
        sr_t, t_taps = teacher(lr)
    teacher_taps = dict(zip(teacher.tap_points, t_taps))

    def f() -> Tensor:
        sr_s, s_taps = student(lr)
        loss, _ = total_loss(
            plan,
            StepOutputs(
                hr=hr,
                sr_s=sr_s,
                student_taps=dict(zip(student.tap_points, s_taps)),
                sr_t=sr_t,
                teacher_taps=teacher_taps,
            ),
        )
        return loss

    return grad_check_parameters(
        f, student.parameters() + plan.parameters(), samples=CHAIN_SAMPLES
    )


OP_SUITE: dict[str, Callable[[np.random.Generator], float]] = {
    "conv2d": _check_conv2d,
    "leaky_relu": _unary(lambda t: ops.leaky_relu(t, 0.1)),
    "relu": _unary(ops.relu),
    "sigmoid": _unary(ops.sigmoid),
    "absolute": _unary(ops.absolute),
    "add": _binary("add"),
    "sub": _binary("sub"),
    "mul": _binary("mul"),
    "scale": _unary(lambda t: ops.scale(t, -1.5)),
    "avg_pool": _unary(lambda t: ops.avg_pool(t, 2)),
    "spatial_mean": _unary(ops.spatial_mean),
    "broadcast_channel": _unary(
        lambda t: ops.broadcast_channel(t, 4), (2, 1, 8, 8)
    ),
    "broadcast_spatial": _unary(
        lambda t: ops.broadcast_spatial(t, 3, 5), (2, 4, 1, 1)
    ),
    "pixel_shuffle": _unary(lambda t: ops.pixel_shuffle(t, 2)),
    "pixel_unshuffle": _unary(lambda t: ops.pixel_unshuffle(t, 2)),
    "l2_normalize": _unary(ops.l2_normalize),
    "l1_mean": _unary(ops.l1_mean),
    "mean": _unary(lambda t: ops.reduce(t, "mean")),
    "sum": _unary(lambda t: ops.reduce(t, "sum")),
    "channel_sum": _unary(
        lambda t: ops.reduce(t, "channel_sum"), (2, 3, 8, 8)
    ),
    "dft2.re": _unary(lambda t: ops.dft2(t)[0]),
    "dft2.im": _unary(lambda t: ops.dft2(t)[1]),
    "magnitude": _check_magnitude,
    "crop": _unary(lambda t: ops.crop(t, 1, 2, 5, 4)),
    "flip": _unary(ops.flip),
    "channel_attention": _check_channel_attention,
    "deep_regressor": _check_deep_regressor,
}


def run_suite(seed: int = 0, *, chain: bool = True) -> dict[str, float]:
    """Return the max relative error of every registered check."""
    result = {}
    checks = dict(OP_SUITE)
    if chain:
        checks["lsfd_chain"] = _check_chain
    for i, (name, check) in enumerate(checks.items()):
        error = check(np.random.default_rng([seed, i]))
        logger.info(CHECKED, name, error)
        result[name] = error
    return result
