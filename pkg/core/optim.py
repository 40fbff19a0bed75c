# core/optim.py

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from core.errors import ConfigError, NonFiniteError, ShapeError
from core.net import MlpNet
from core.numkernel import ordered_sum
from utils.checkpoint_utils import load_adam_checkpoint, save_adam_checkpoint

logger = logging.getLogger(__name__)


def constant_schedule(step: int) -> float:
    return 1.0


@dataclass
class AdamState:
    """
    Bias-corrected Adam moments for a fixed list of parameter tensors.

    lr_schedule maps the (1-based) step to a multiplier on learning_rate.
    """
    learning_rate: float
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: Optional[float] = None
    lr_schedule: Callable[[int], float] = constant_schedule

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], learning_rate: float, **kwargs) -> "AdamState":
        if learning_rate < 0:
            raise ConfigError("learning_rate", f"must be >= 0, got {learning_rate}")
        return cls(learning_rate=learning_rate,
                   m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kwargs)

    @classmethod
    def for_nets(cls, nets: Sequence[MlpNet], learning_rate: float, **kwargs) -> "AdamState":
        return cls.for_params([p for net in nets for p in net.parameters()], learning_rate, **kwargs)


def _check_grads(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                 names: Optional[Sequence[str]]) -> None:
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError("parameter/gradient shape mismatch", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(names[i] if names else f"grad[{i}]")


def _clip_factor(grads: Sequence[np.ndarray], clip_norm: Optional[float]) -> float:
    if clip_norm is None:
        return 1.0
    total = float(np.sqrt(sum(float(ordered_sum(g.ravel() * g.ravel())) for g in grads)))
    return 1.0 if total <= clip_norm or total == 0.0 else clip_norm / total


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              names: Optional[Sequence[str]] = None) -> AdamState:
    """
    One bias-corrected Adam update, in place; gradients are zeroed afterwards.

    Raises NonFiniteError (naming the tensor) before touching anything.
    """
    _check_grads(params, grads, names)
    if len(state.m) != len(params):
        raise ShapeError(f"Adam state holds {len(state.m)} tensors, got {len(params)}")
    scale = _clip_factor(grads, state.clip_norm)
    state.step += 1
    lr = state.learning_rate * state.lr_schedule(state.step)
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g_eff = g * scale if scale != 1.0 else g
        m *= state.beta1
        m += (1.0 - state.beta1) * g_eff
        v *= state.beta2
        v += (1.0 - state.beta2) * g_eff * g_eff
        m_hat = m / bias1
        v_hat = v / bias2
        p -= lr * (m_hat / (np.sqrt(v_hat) + state.eps))
        g[...] = 0.0
    return state


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float,
             clip_norm: Optional[float] = None, names: Optional[Sequence[str]] = None) -> None:
    """p <- p - lr * g, in place; gradients are zeroed afterwards."""
    _check_grads(params, grads, names)
    scale = _clip_factor(grads, clip_norm)
    for p, g in zip(params, grads):
        p -= lr * (g * scale if scale != 1.0 else g)
        g[...] = 0.0


def step_nets(nets: Sequence[MlpNet], state: AdamState) -> None:
    """Adam over the concatenated parameters of several nets."""
    params = [p for net in nets for p in net.parameters()]
    grads = [g for net in nets for g in net.gradients()]
    names = [f"net{i}.{n}" for i, net in enumerate(nets) for n in net.parameter_names()]
    adam_step(params, grads, state, names)
    for net in nets:
        net.mark_updated()


def save_adam(state: AdamState, path: str) -> None:
    save_adam_checkpoint(path, state.step,
                         (state.learning_rate, state.beta1, state.beta2, state.eps),
                         state.m, state.v)


def load_adam(path: str) -> AdamState:
    step, (lr, beta1, beta2, eps), m, v = load_adam_checkpoint(path)
    return AdamState(learning_rate=lr, m=m, v=v, step=step, beta1=beta1, beta2=beta2, eps=eps)
