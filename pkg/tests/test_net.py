import numpy as np
import pytest

from conftest import max_rel_error
from core.errors import ConfigError, ShapeError, StaleCacheError
from core.net import MlpSpec, init_net, load_net, numerical_gradient, perturbed_copy, save_net
from core.numkernel import make_rng


def test_spec_layer_dims_and_parameter_count():
    spec = MlpSpec(4, (8, 8))
    assert spec.out_dim == 4
    assert spec.layer_dims == [(4, 8), (8, 8), (8, 4)]
    assert spec.parameter_count == 4 * 8 + 8 + 8 * 8 + 8 + 8 * 4 + 4


def test_residual_spec_needs_square_map():
    with pytest.raises(ConfigError):
        MlpSpec(4, (8,), 3, residual=True)
    with pytest.raises(ConfigError):
        MlpSpec(4, (0,))


def test_zero_residual_init_is_exact_identity(rng):
    net = init_net(MlpSpec(5, (7, 7), residual=True), "zero_residual", rng)
    x = rng.normal(size=(9, 5))
    assert np.array_equal(net(x), x)


def test_zero_residual_requires_residual_spec(rng):
    with pytest.raises(ConfigError):
        init_net(MlpSpec(3, (4,), 2), "zero_residual", rng)
    with pytest.raises(ConfigError):
        init_net(MlpSpec(3), "xavier", rng)


def test_forward_rejects_wrong_input_dim(tiny_net):
    with pytest.raises(ShapeError):
        tiny_net(np.ones((2, 3)))


def test_backward_matches_finite_differences():
    for seed in range(20):
        rng = make_rng(seed)
        residual = bool(seed % 2)
        net = init_net(MlpSpec(3, (5, 4), 3 if residual else 2, residual=residual), "he_normal", rng)
        x = rng.normal(size=(6, 3))
        weights = rng.normal(size=(6, net.spec.out_dim))

        out, cache = net.forward(x)
        grad_in = net.backward(cache, weights)

        def loss():
            return float(np.sum(net(x) * weights))

        for param, grad in zip(net.parameters(), net.gradients()):
            assert max_rel_error(grad, numerical_gradient(loss, param)) <= 1e-4

        assert max_rel_error(grad_in, numerical_gradient(loss, x)) <= 1e-4


def test_backward_accumulates_until_zero_grad(tiny_net, rng):
    x = rng.normal(size=(3, 4))
    g = rng.normal(size=(3, 4))
    _, cache = tiny_net.forward(x)
    tiny_net.backward(cache, g)
    first = [grad.copy() for grad in tiny_net.gradients()]
    _, cache = tiny_net.forward(x)
    tiny_net.backward(cache, g)
    for a, b in zip(first, tiny_net.gradients()):
        np.testing.assert_allclose(b, 2 * a)
    tiny_net.zero_grad()
    assert tiny_net.grad_is_zero()


def test_stale_cache_is_rejected(tiny_net, rng):
    x = rng.normal(size=(2, 4))
    g = np.ones((2, 4))
    _, cache = tiny_net.forward(x)
    tiny_net.mark_updated()
    with pytest.raises(StaleCacheError):
        tiny_net.backward(cache, g)

    _, cache = tiny_net.forward(x)
    tiny_net.backward(cache, g)
    with pytest.raises(StaleCacheError):
        tiny_net.backward(cache, g)

    other = tiny_net.copy()
    _, cache = other.forward(x)
    with pytest.raises(StaleCacheError):
        tiny_net.backward(cache, g)


def test_backward_checks_gradient_shape(tiny_net, rng):
    _, cache = tiny_net.forward(rng.normal(size=(2, 4)))
    with pytest.raises(ShapeError):
        tiny_net.backward(cache, np.ones((3, 4)))


def test_checkpoint_restores_outputs(tiny_net, rng, tmp_path):
    path = str(tmp_path / "net.bin")
    save_net(tiny_net, path)
    restored = load_net(path, residual=True)
    x = rng.normal(size=(5, 4))
    assert restored.spec == tiny_net.spec
    assert np.array_equal(restored(x), tiny_net(x))


def test_perturbed_copy_moves_by_norm(tiny_net, rng):
    direction = [rng.normal(size=p.shape) for p in tiny_net.parameters()]
    total = np.sqrt(sum(np.sum(d * d) for d in direction))
    direction = [d / total for d in direction]
    moved = perturbed_copy(tiny_net, direction, 0.5)
    shift = np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(moved.parameters(), tiny_net.parameters())))
    assert shift == pytest.approx(0.5)
    same = perturbed_copy(tiny_net, direction, 0.0)
    x = rng.normal(size=(3, 4))
    assert np.array_equal(same(x), tiny_net(x))
