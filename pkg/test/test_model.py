"""Test model."""

from io import StringIO

import numpy as np
from cfgenvy import yaml_dumps, yaml_loads
from numpy.testing import assert_array_equal
from pytest import mark, raises

from srdk.model import (
    ChannelAttention,
    FeatureTapSet,
    ModelConfig,
    build_model,
    channel_attention,
    model_stats,
    pair_taps,
)
from srdk.tensor import InvalidShapeError, Tensor
from srdk.utils import ConfigError


@mark.parametrize(
    "config,expected",
    (
        # head 224, 2 groups of (2 RCABs of 1210 + conv 584), tail 584,
        # upsampler 2336, final 219
        (
            ModelConfig(
                variant="rcan_like",
                channels=8,
                n_blocks=2,
                n_groups=2,
                reduction=4,
                scale=2,
            ),
            9371,
        ),
        # head 224, 2 blocks of 1168, tail 584, upsampler 2336, final 219
        (
            ModelConfig(variant="edsr_like", channels=8, n_blocks=2, scale=2),
            5699,
        ),
    ),
)
def test_toy_parameter_count(config, expected):
    """Test hand-computed layer-by-layer sums."""
    assert build_model(config).parameter_count == expected


@mark.parametrize(
    "config,expected",
    (
        (
            ModelConfig(
                variant="rcan_like",
                channels=64,
                n_blocks=20,
                n_groups=10,
                scale=4,
            ),
            15592355,
        ),
        (
            ModelConfig(
                variant="rcan_like",
                channels=64,
                n_blocks=6,
                n_groups=10,
                scale=4,
            ),
            5171315,
        ),
        (
            ModelConfig(
                variant="edsr_like", channels=256, n_blocks=32, scale=4
            ),
            43089923,
        ),
        (
            ModelConfig(
                variant="edsr_like", channels=64, n_blocks=16, scale=4
            ),
            1517571,
        ),
    ),
)
def test_full_size_parameter_count(config, expected):
    """Test published-size configurations."""
    assert model_stats(config, 8, 8)["parameters"] == expected


@mark.parametrize("scale", (2, 3, 4))
def test_forward_shapes(scale, teacher_config):
    """Test SR shape and taps in depth order."""
    teacher_config.scale = scale
    model = build_model(teacher_config)
    sr, taps = model(Tensor(np.zeros((2, 3, 5, 4))))
    assert sr.shape == (2, 3, 5 * scale, 4 * scale)
    assert model.tap_points == ["group_out/1", "group_out/2"]
    assert [each.shape for each in taps] == [(2, 8, 5, 4)] * 2


def test_forward_rejects_bad_input(teacher_config):
    """Test non (N, 3, h, w) input raises."""
    model = build_model(teacher_config)
    with raises(InvalidShapeError):
        model(Tensor(np.zeros((1, 1, 4, 4))))


def test_init_is_seeded(teacher_config):
    """Test same seed, same parameters; biases start at zero."""
    a = build_model(teacher_config)
    b = build_model(teacher_config)
    for x, y in zip(a.parameters(), b.parameters()):
        assert_array_equal(x.data, y.data)
    assert not a.head.bias.data.any()
    bound = np.sqrt(1.0 / 27.0)
    assert np.abs(a.head.weight.data).max() <= bound


@mark.parametrize(
    "changes,key",
    (
        ({"variant": "vdsr"}, "variant"),
        ({"scale": 5}, "scale"),
        ({"channels": 8, "reduction": 16}, "reduction"),
        ({"n_blocks": 0}, "n_blocks"),
        ({"taps": ["group_out/9"]}, "taps"),
    ),
)
def test_invalid_config(changes, key):
    """Test config errors name the offending key."""
    config = ModelConfig(channels=8, n_blocks=1, n_groups=2, reduction=4)
    for name, value in changes.items():
        setattr(config, name, value)
    with raises(ConfigError) as e:
        build_model(config)
    assert e.value.key == key


def test_channel_attention_divisibility():
    """Test channels must divide by the reduction."""
    with raises(ConfigError):
        ChannelAttention("attention", 6, 4)


def test_channel_attention_gates(rng):
    """Test the gate is in (0, 1) per channel."""
    layer = ChannelAttention("attention", 4, 2)
    x = Tensor(rng.uniform(0.5, 1.0, (1, 4, 3, 3)))
    out = channel_attention(x, layer).data
    ratio = out / x.data
    assert np.all(ratio > 0.0) and np.all(ratio < 1.0)
    assert np.allclose(ratio, ratio[:, :, :1, :1])
    with raises(InvalidShapeError):
        channel_attention(Tensor(np.ones((1, 2, 3, 3))), layer)


def test_edsr_default_taps():
    """Test four evenly spaced taps."""
    config = ModelConfig(variant="edsr_like", channels=4, n_blocks=8)
    assert config.tap_points() == [
        "block_out/2",
        "block_out/4",
        "block_out/6",
        "block_out/8",
    ]


@mark.parametrize(
    "teacher_groups,student_groups,expected",
    (
        (4, 2, [(2, 1), (4, 2)]),
        (2, 2, [(1, 1), (2, 2)]),
        (10, 3, [(3, 1), (7, 2), (10, 3)]),
        (2, 4, [(1, 1), (1, 2), (2, 3), (2, 4)]),
    ),
)
def test_pair_taps(teacher_groups, student_groups, expected):
    """Test student tap j pairs with teacher tap round(j * T / S)."""
    teacher = build_model(
        ModelConfig(
            channels=4, n_blocks=1, n_groups=teacher_groups, reduction=2
        ),
        initialize=False,
    )
    student = build_model(
        ModelConfig(
            channels=2, n_blocks=1, n_groups=student_groups, reduction=2
        ),
        initialize=False,
    )
    taps = pair_taps(teacher, student)
    assert taps == FeatureTapSet(
        [(f"group_out/{t}", f"group_out/{s}") for t, s in expected]
    )
    assert len(taps) == student_groups


def test_pair_taps_scale_mismatch(teacher_config, student_config):
    """Test teacher and student scales must match."""
    student_config.scale = 3
    with raises(ConfigError):
        pair_taps(build_model(teacher_config), build_model(student_config))


def test_state_round_trip(teacher_config):
    """Test state and load_state."""
    a = build_model(teacher_config)
    b = build_model(teacher_config, initialize=False)
    b.load_state(a.state())
    for x, y in zip(a.parameters(), b.parameters()):
        assert_array_equal(x.data, y.data)
    state = a.state()
    del state["head.bias"]
    with raises(ConfigError):
        b.load_state(state)


def test_config_yaml_round_trip(teacher_config):
    """Test the yaml tag round trip."""
    ModelConfig.as_yaml_type()
    actual = yaml_loads(StringIO(yaml_dumps(teacher_config)))
    assert actual == teacher_config
