"""Test tensor."""

from threading import Thread

import numpy as np
from numpy.testing import assert_array_equal
from pytest import raises

from srdk.ops import add, mul, reduce, scale
from srdk.tensor import (
    ContractError,
    Parameter,
    Tape,
    Tensor,
    active_tape,
    backward,
    no_grad,
    zero_grad,
)


def test_product_rule():
    """Test product rule."""
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    y = Tensor([4.0, 5.0, 6.0], requires_grad=True)
    with Tape() as tape:
        loss = reduce(mul(x, y), "sum")
        tape.backward(loss)
    assert loss.item() == 32.0
    assert_array_equal(x.grad, [4.0, 5.0, 6.0])
    assert_array_equal(y.grad, [1.0, 2.0, 3.0])


def test_fan_out_accumulates():
    """Test a tensor used twice gets both contributions."""
    x = Tensor([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        y = scale(x, 3.0)
        loss = reduce(add(y, y), "sum")
        backward(loss)
    assert_array_equal(x.grad, [6.0, 6.0])
    assert len(tape.nodes) == 3


def test_parameter_accumulates_until_zeroed():
    """Test parameter grads accumulate across backward passes."""
    p = Parameter(np.array([2.0]), name="p")
    for _ in range(2):
        with Tape() as tape:
            tape.backward(reduce(scale(p, 0.5), "sum"))
    assert_array_equal(p.grad, [1.0])
    zero_grad([p])
    assert_array_equal(p.grad, [0.0])


def test_parameter_does_not_copy():
    """Test parameter data is the array it was given."""
    data = np.zeros(3)
    p = Parameter(data, name="p")
    data[0] = 1.0
    assert p.data[0] == 1.0


def test_no_grad_records_nothing():
    """Test no_grad suspends recording."""
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        with no_grad():
            y = scale(x, 2.0)
        assert not tape.nodes
    assert y.tape is None
    assert not y.requires_grad


def test_frozen_inputs_get_no_grad():
    """Test tensors without requires_grad are left alone."""
    frozen = Parameter(np.array([1.0]), name="frozen")
    frozen.requires_grad = False
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        tape.backward(reduce(mul(frozen, x), "sum"))
    assert_array_equal(frozen.grad, [0.0])
    assert_array_equal(x.grad, [1.0])


def test_non_scalar_loss():
    """Test non-scalar loss raises."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = scale(x, 2.0)
        with raises(ContractError):
            tape.backward(y)


def test_loss_off_tape():
    """Test a loss from no tape or another tape raises."""
    with raises(ContractError):
        backward(Tensor(1.0))
    x = Tensor([1.0], requires_grad=True)
    with Tape():
        loss = reduce(x, "sum")
    with Tape() as other:
        with raises(ContractError):
            other.backward(loss)


def test_tape_is_per_thread():
    """Test a tape entered on one thread records nothing from another."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    seen = {}

    def worker():
        seen["tape"] = active_tape()
        seen["y"] = scale(x, 2.0)

    with Tape() as tape:
        thread = Thread(target=worker)
        thread.start()
        thread.join()
        assert active_tape() is tape
    assert seen["tape"] is None
    assert seen["y"].tape is None
    assert not tape.nodes
    assert_array_equal(seen["y"].data, [2.0, 4.0])
