"""Test checkpoint."""

import numpy as np
from numpy.testing import assert_array_equal
from pytest import fixture, raises

from srdk.checkpoint import (
    MAGIC,
    PREAMBLE,
    Checkpoint,
    CheckpointFormatError,
    load_checkpoint,
    read_header,
    save_checkpoint,
    validate_directory,
)
from srdk.model import build_model
from srdk.optim import AdamState


@fixture
def checkpoint(teacher_config):
    """Model, regressor and optimizer state."""
    model = build_model(teacher_config)
    adam = AdamState.for_parameters(model.parameters())
    adam.t = 3
    adam.m["head.bias"][...] = 0.5
    return Checkpoint.build(
        model_config=teacher_config.as_yaml(),
        model_state=model.state(),
        regressor_state={"regressor1.layer1.weight": np.ones((2, 2, 1, 1))},
        adam=adam,
        rng_state={"seed": 1, "epoch": 2},
        epoch=2,
        extra={"method": "lsfd"},
    )


@fixture
def path(tmp_path, checkpoint):
    """Saved checkpoint."""
    result = tmp_path / "model.ckpt"
    save_checkpoint(checkpoint, result)
    return result


def test_round_trip(path, checkpoint):
    """Test every tensor and field survives bit for bit."""
    actual = load_checkpoint(path)
    assert list(actual.tensors) == list(checkpoint.tensors)
    for name, value in checkpoint.tensors.items():
        assert_array_equal(actual.tensors[name], value)
    assert actual.model_config == checkpoint.model_config
    assert actual.rng_state == {"seed": 1, "epoch": 2}
    assert actual.epoch == 2
    assert actual.extra == {"method": "lsfd"}
    adam = actual.adam_state()
    assert adam is not None
    assert adam.t == 3
    assert np.all(adam.m["head.bias"] == 0.5)


def test_roles(checkpoint, teacher_config):
    """Test regressors are excluded from the deployable count."""
    model = build_model(teacher_config)
    assert checkpoint.deployable_parameter_count == model.parameter_count
    assert checkpoint.regressor_parameter_count == 4
    assert set(checkpoint.model_state()) == set(model.state())
    assert Checkpoint(model_config={}).adam_state() is None


def test_header_offsets(path):
    """Test offsets are contiguous from the payload start."""
    header = read_header(path)
    expected = 0
    for each in header["tensors"]:
        assert each["offset"] == expected
        assert each["nbytes"] == 8 * int(np.prod(each["shape"]))
        expected += each["nbytes"]


def test_bad_magic(path):
    """Test a wrong magic fails at offset 0."""
    data = path.read_bytes()
    path.write_bytes(b"NOTACKPT" + data[len(MAGIC) :])
    with raises(CheckpointFormatError) as e:
        load_checkpoint(path)
    assert e.value.offset == 0


def test_truncated_payload(path):
    """Test a short file reports its length."""
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with raises(CheckpointFormatError) as e:
        load_checkpoint(path)
    assert e.value.offset == len(data) - 3


def test_truncated_header(path):
    """Test a file cut inside the header raises."""
    path.write_bytes(path.read_bytes()[: PREAMBLE + 4])
    with raises(CheckpointFormatError):
        load_checkpoint(path)


def test_trailing_bytes(path):
    """Test extra bytes after the payload are rejected at the end offset."""
    data = path.read_bytes()
    path.write_bytes(data + b"\0")
    with raises(CheckpointFormatError) as e:
        load_checkpoint(path)
    assert e.value.offset == len(data)


def test_malformed_header(path):
    """Test a garbled header raises at the header start."""
    data = bytearray(path.read_bytes())
    data[PREAMBLE] = 0xFF
    path.write_bytes(bytes(data))
    with raises(CheckpointFormatError) as e:
        load_checkpoint(path)
    assert e.value.offset == PREAMBLE


def test_validate_directory():
    """Test gaps and size mismatches are located."""
    good = [
        {"name": "a", "offset": 0, "nbytes": 16, "shape": [2]},
        {"name": "b", "offset": 16, "nbytes": 8, "shape": [1]},
    ]
    assert validate_directory(good, 100) == 124
    gap = [dict(good[0]), dict(good[1], offset=24)]
    with raises(CheckpointFormatError) as e:
        validate_directory(gap, 100)
    assert e.value.offset == 124
    size = [dict(good[0], nbytes=8)]
    with raises(CheckpointFormatError) as e:
        validate_directory(size, 100)
    assert e.value.offset == 100
