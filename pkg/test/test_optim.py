"""Test optim."""

import numpy as np
from pytest import mark, raises

from srdk.optim import (
    AdamState,
    DivergenceError,
    adam_step,
    clip_grad_norm,
    global_norm,
    lr_at,
)
from srdk.tensor import Parameter


def reference_adam(theta, grads, lr, beta1=0.9, beta2=0.99, eps=1e-8):
    """Textbook bias-corrected ADAM, one step per gradient."""
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g**2
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta


def test_adam_matches_reference(rng):
    """Test ten steps against the update equations."""
    theta = rng.normal(size=(3, 4))
    grads = [rng.normal(size=(3, 4)) for _ in range(10)]
    p = Parameter(theta.copy(), name="p")
    state = AdamState.for_parameters([p])
    for g in grads:
        p.grad[...] = g
        adam_step([p], state, 1e-3)
    assert state.t == 10
    expected = reference_adam(theta, grads, 1e-3)
    assert np.max(np.abs(p.data - expected)) <= 1e-12


def test_adam_first_step_size(rng):
    """Test the first bias-corrected step moves each weight by about lr."""
    p = Parameter(np.zeros(5), name="p")
    p.grad[...] = rng.uniform(0.5, 2.0, 5)
    adam_step([p], AdamState(), 1e-3)
    assert np.allclose(p.data, -1e-3, rtol=1e-6)


def test_adam_rejects_non_finite():
    """Test non-finite gradients name the parameter and skip the update."""
    good = Parameter(np.zeros(2), name="good")
    bad = Parameter(np.zeros(2), name="bad")
    bad.grad[...] = [1.0, np.nan]
    state = AdamState.for_parameters([good, bad])
    with raises(DivergenceError) as e:
        adam_step([good, bad], state, 1e-3)
    assert e.value.term == "bad"
    assert state.t == 0
    assert not good.data.any()


@mark.parametrize(
    "epoch,expected", ((0, 1e-4), (99, 1e-4), (100, 5e-5), (150, 5e-5))
)
def test_lr_at(epoch, expected):
    """Test lr halves once at halve_at_epoch."""
    assert lr_at(epoch, 1e-4, 100) == expected


def test_clip_grad_norm():
    """Test clipping rescales to max_norm and reports the old norm."""
    a = Parameter(np.zeros(2), name="a")
    b = Parameter(np.zeros(1), name="b")
    a.grad[...] = [3.0, 0.0]
    b.grad[...] = [4.0]
    assert global_norm([a, b]) == 5.0
    assert clip_grad_norm([a, b], 10.0) == 5.0
    assert a.grad[0] == 3.0
    assert clip_grad_norm([a, b], 1.0) == 5.0
    assert abs(global_norm([a, b]) - 1.0) <= 1e-12
    assert clip_grad_norm([a, b], 0.0) == global_norm([a, b])
