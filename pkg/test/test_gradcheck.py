"""Test gradcheck."""

import numpy as np
from pytest import mark

from srdk.gradcheck import (
    OP_SUITE,
    _check_chain,
    grad_check,
    grad_check_parameters,
    relative_error,
    run_suite,
)
from srdk.ops import reduce
from srdk.tensor import Parameter, Tensor, record


def test_exact_for_sum():
    """Test a linear function on dyadic inputs has zero error."""
    x = Tensor(np.arange(8, dtype=np.float64).reshape(2, 4) / 4.0)
    assert grad_check(lambda t: reduce(t, "sum"), x, eps=2.0**-20) == 0.0


def test_relative_error_floor():
    """Test the denominator floor."""
    assert relative_error(np.zeros(1), np.zeros(1)) == 0.0
    assert abs(relative_error(np.zeros(1), np.full(1, 1e-9)) - 0.1) < 1e-12
    assert relative_error(np.array([2.0]), np.array([1.0])) == 0.5


def test_catches_a_wrong_vjp():
    """Test a doubled gradient is reported."""

    def doubled(x):
        return record("doubled", (x,), x.data.copy(), lambda g: (2.0 * g,))

    x = Tensor(np.linspace(-1.0, 1.0, 6))
    error = grad_check(lambda t: reduce(doubled(t), "sum"), x)
    assert error > 0.4


@mark.parametrize("index,name", list(enumerate(OP_SUITE)))
def test_op_suite(index, name):
    """Test every differentiable op against central differences."""
    error = OP_SUITE[name](np.random.default_rng([0, index]))
    assert error < 1e-5, name


def test_lsfd_chain():
    """Test toy models plus the lsfd total loss end to end."""
    assert _check_chain(np.random.default_rng(0)) < 1e-4


def test_run_suite_keys():
    """Test run_suite reports every op."""
    errors = run_suite(seed=1, chain=False)
    assert set(errors) == set(OP_SUITE)
    assert all(each < 1e-5 for each in errors.values())


def test_full_sweep_finds_a_single_wrong_entry():
    """Test samples=None checks every entry of a parameter."""
    p = Parameter(np.linspace(0.5, 1.5, 5), name="p")
    skew = np.array([1.0, 1.0, 1.0, 2.0, 1.0])

    def f():
        y = record("skewed", (p,), p.data.copy(), lambda g: (g * skew,))
        return reduce(y, "sum")

    assert grad_check_parameters(f, [p], samples=None) > 0.4
    assert grad_check_parameters(f, [p], samples=5) > 0.4
