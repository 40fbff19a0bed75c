# core/net.py
"""
Residual ReLU MLPs with hand-written reverse-mode gradients.

One class serves the dual-encoder towers f and g, the synthetic drift maps,
the corrector h and the toy reader. The residual connection spans the whole
net: output = layers(input) + input.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, ShapeError, StaleCacheError
from core.numkernel import as_matrix, batch_contract, check_finite, ordered_matmul, ordered_sum
from utils.checkpoint_utils import load_net_checkpoint, save_net_checkpoint

logger = logging.getLogger(__name__)

INIT_MODES = ("he_normal", "zero_residual")

_net_ids = itertools.count()


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden_dims: Tuple[int, ...] = ()
    out_dim: int = 0
    residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.out_dim == 0:
            object.__setattr__(self, "out_dim", self.in_dim)
        for name, value in (("in_dim", self.in_dim), ("out_dim", self.out_dim)):
            if value < 1:
                raise ConfigError(name, f"must be >= 1, got {value}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims", f"widths must be >= 1, got {self.hidden_dims}")
        if self.residual and self.in_dim != self.out_dim:
            raise ConfigError("residual", f"needs in_dim == out_dim, got {self.in_dim} -> {self.out_dim}")

    @property
    def layer_dims(self) -> List[Tuple[int, int]]:
        """(fan_in, fan_out) per affine layer."""
        dims = [self.in_dim, *self.hidden_dims, self.out_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def parameter_count(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_dims)

    def to_dict(self) -> dict:
        return {"in_dim": self.in_dim, "hidden_dims": list(self.hidden_dims),
                "out_dim": self.out_dim, "residual": self.residual}


@dataclass
class ForwardCache:
    """Activations recorded by forward, consumed once by backward."""
    net_id: int
    version: int
    inputs: np.ndarray
    layer_inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    consumed: bool = False


class MlpNet:
    """Parameters plus gradient buffers of identical shape; single writer."""

    def __init__(self, spec: MlpSpec, weights: List[np.ndarray], biases: List[np.ndarray]):
        if len(weights) != len(spec.layer_dims) or len(biases) != len(weights):
            raise ShapeError(f"expected {len(spec.layer_dims)} layers, got {len(weights)}")
        for (fan_in, fan_out), w, b in zip(spec.layer_dims, weights, biases):
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ShapeError("layer shape does not match MlpSpec", w.shape, (fan_out, fan_in))
        self.spec = spec
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.grad_weights = [np.zeros_like(w) for w in self.weights]
        self.grad_biases = [np.zeros_like(b) for b in self.biases]
        self.net_id = next(_net_ids)
        self.version = 0

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> List[np.ndarray]:
        """Live parameter arrays, ordered W0, b0, W1, b1, ..."""
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def gradients(self) -> List[np.ndarray]:
        return [g for pair in zip(self.grad_weights, self.grad_biases) for g in pair]

    def parameter_names(self) -> List[str]:
        return [n for i in range(len(self.weights)) for n in (f"W{i}", f"b{i}")]

    def zero_grad(self) -> None:
        for g in self.gradients():
            g[...] = 0.0

    def grad_is_zero(self) -> bool:
        return all(not np.any(g) for g in self.gradients())

    def mark_updated(self) -> None:
        """Invalidate outstanding forward caches after a parameter change."""
        self.version += 1

    def copy(self) -> "MlpNet":
        return MlpNet(self.spec, self.weights, self.biases)

    def forward(self, batch, keep_cache: bool = True) -> Tuple[np.ndarray, Optional[ForwardCache]]:
        """
        Affine -> ReLU per hidden layer, affine at the end, plus the input if residual.

        Returns the output matrix and the cache needed by backward.
        """
        x = as_matrix("batch", batch, self.spec.in_dim)
        cache = ForwardCache(self.net_id, self.version, x) if keep_cache else None
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = ordered_matmul(h, w.T) + b
            if cache is not None:
                cache.layer_inputs.append(h)
                cache.pre_activations.append(z)
            h = z if i == last else np.maximum(z, 0.0)
        out = h + x if self.spec.residual else h
        check_finite("forward output", out)
        return out, cache

    def __call__(self, batch) -> np.ndarray:
        return self.forward(batch, keep_cache=False)[0]

    def backward(self, cache: ForwardCache, out_grad) -> np.ndarray:
        """
        Accumulate parameter gradients for d(loss)/d(output) = out_grad.

        Returns d(loss)/d(input). The ReLU derivative at exactly 0 is 0.
        """
        if cache is None or cache.net_id != self.net_id:
            raise StaleCacheError("forward cache belongs to a different net")
        if cache.version != self.version:
            raise StaleCacheError("parameters changed since the forward pass")
        if cache.consumed:
            raise StaleCacheError("forward cache already used by a backward pass")
        out_grad = np.asarray(out_grad, dtype=np.float64)
        if out_grad.shape != (cache.inputs.shape[0], self.spec.out_dim):
            raise ShapeError("out_grad does not match forward output",
                             out_grad.shape, (cache.inputs.shape[0], self.spec.out_dim))
        check_finite("out_grad", out_grad)
        cache.consumed = True

        delta = out_grad
        grad_in = None
        for i in range(len(self.weights) - 1, -1, -1):
            self.grad_weights[i] += batch_contract(delta, cache.layer_inputs[i])
            self.grad_biases[i] += ordered_sum(delta, axis=0)
            grad_in = ordered_matmul(delta, self.weights[i])
            if i > 0:
                delta = grad_in * (cache.pre_activations[i - 1] > 0.0)
        if self.spec.residual:
            grad_in = grad_in + out_grad
        return grad_in

    def save(self, path: str) -> None:
        save_net_checkpoint(path, self.weights, self.biases)


def init_net(spec: MlpSpec, mode: str, rng: np.random.Generator, scale: float = 1.0) -> MlpNet:
    """
    Build a net with He-normal weights (variance scale * 2 / fan_in) and zero biases.

    zero_residual additionally zeroes the final layer so a residual net starts
    as the identity map.
    """
    if mode not in INIT_MODES:
        raise ConfigError("init_mode", f"unknown mode {mode!r}")
    if mode == "zero_residual" and not spec.residual:
        raise ConfigError("init_mode", "zero_residual requires a residual MlpSpec")
    if scale < 0:
        raise ConfigError("init_scale", f"must be >= 0, got {scale}")
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_dims:
        std = np.sqrt(scale * 2.0 / fan_in)
        weights.append(rng.normal(0.0, 1.0, (fan_out, fan_in)) * std)
        biases.append(np.zeros(fan_out))
    if mode == "zero_residual":
        weights[-1][...] = 0.0
        biases[-1][...] = 0.0
    return MlpNet(spec, weights, biases)


def forward(net: MlpNet, batch) -> Tuple[np.ndarray, ForwardCache]:
    return net.forward(batch)


def backward(net: MlpNet, cache: ForwardCache, out_grad) -> np.ndarray:
    return net.backward(cache, out_grad)


def save_net(net: MlpNet, path: str) -> None:
    net.save(path)


def load_net(path: str, residual: bool = False) -> MlpNet:
    """Rebuild a net from a CORRNET1 checkpoint; the residual flag lives in the run manifest."""
    weights, biases = load_net_checkpoint(path)
    dims = [w.shape[1] for w in weights] + [weights[-1].shape[0]]
    spec = MlpSpec(in_dim=dims[0], hidden_dims=tuple(dims[1:-1]), out_dim=dims[-1], residual=residual)
    return MlpNet(spec, weights, biases)


def perturbed_copy(net: MlpNet, direction: Sequence[np.ndarray], norm: float) -> MlpNet:
    """Copy of net with parameters moved by norm * direction (direction has unit total norm)."""
    clone = net.copy()
    for p, u in zip(clone.parameters(), direction):
        p += norm * u
    return clone


def numerical_gradient(loss_fn: Callable[[], float], param: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of loss_fn with respect to every entry of param (modified in place, restored)."""
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        up = loss_fn()
        flat[i] = original - eps
        down = loss_fn()
        flat[i] = original
        grad_flat[i] = (up - down) / (2.0 * eps)
    return grad
