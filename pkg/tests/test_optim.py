import numpy as np
import pytest

from core.errors import NonFiniteError, StaleCacheError
from core.optim import AdamState, adam_step, load_adam, save_adam, sgd_step, step_nets


def test_first_adam_step_is_normalized_gradient():
    p = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -4.0, 0.0])
    expected = p - 0.1 * g / (np.abs(g) + 1e-8)
    state = AdamState.for_params([p], 0.1)
    adam_step([p], [g], state)
    np.testing.assert_allclose(p, expected, rtol=1e-12)
    assert state.step == 1
    assert not np.any(g)


def test_zero_learning_rate_leaves_parameters_bit_identical():
    p = np.array([[1.0, 2.0], [3.0, 4.0]])
    before = p.copy()
    state = AdamState.for_params([p], 0.0)
    for _ in range(5):
        adam_step([p], [np.ones_like(p)], state)
    assert np.array_equal(p, before)


def test_non_finite_gradient_is_named_and_nothing_moves():
    p = np.ones(3)
    state = AdamState.for_params([p], 0.1)
    with pytest.raises(NonFiniteError) as err:
        adam_step([p], [np.array([0.0, np.inf, 0.0])], state, names=["W0"])
    assert err.value.name == "W0"
    assert np.array_equal(p, np.ones(3))
    assert state.step == 0


def test_adam_minimizes_a_quadratic():
    p = np.array([3.0, -1.5])
    state = AdamState.for_params([p], 0.05)
    for _ in range(2000):
        adam_step([p], [2.0 * p], state)
    assert np.max(np.abs(p)) < 0.05


def test_global_norm_clipping_scales_sgd_update():
    p = np.zeros(2)
    sgd_step([p], [np.array([3.0, 4.0])], lr=1.0, clip_norm=1.0)
    np.testing.assert_allclose(p, [-0.6, -0.8])


def test_schedule_multiplies_learning_rate():
    p = np.zeros(1)
    state = AdamState.for_params([p], 0.1, lr_schedule=lambda step: 0.5)
    adam_step([p], [np.ones(1)], state)
    np.testing.assert_allclose(p, [-0.05], rtol=1e-6)


def test_step_nets_zeroes_grads_and_invalidates_caches(tiny_net, rng):
    x = rng.normal(size=(2, 4))
    _, cache = tiny_net.forward(x)
    tiny_net.backward(cache, np.ones((2, 4)))
    state = AdamState.for_nets([tiny_net], 0.01)
    _, pending = tiny_net.forward(x)
    step_nets([tiny_net], state)
    assert tiny_net.grad_is_zero()
    with pytest.raises(StaleCacheError):
        tiny_net.backward(pending, np.ones((2, 4)))


def test_adam_checkpoint_restores_moments(tmp_path):
    p = [np.array([[1.0, 2.0]]), np.array([0.5, 0.25, 0.0])]
    state = AdamState.for_params(p, 0.01)
    adam_step(p, [np.ones((1, 2)), np.array([1.0, -1.0, 2.0])], state)
    path = str(tmp_path / "adam.bin")
    save_adam(state, path)
    restored = load_adam(path)
    assert restored.step == 1
    assert restored.learning_rate == 0.01
    for a, b in zip(state.m + state.v, restored.m + restored.v):
        assert np.array_equal(a, b)
