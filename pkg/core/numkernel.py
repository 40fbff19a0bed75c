# core/numkernel.py
"""
Dense numeric primitives shared by every other module.

All reductions that feed reported numbers run in a fixed ascending-index
order so results do not depend on BLAS threading. Embedding matrices are
plain row-major float64 numpy arrays of shape (rows, dim).
"""

import math
from typing import Optional, Sequence

import numpy as np

from core.errors import NonFiniteError, ShapeError, SupportError

EmbeddingMatrix = np.ndarray

# Gumbel uniforms are clamped into this open interval
_U_LOW = 1e-300
_U_HIGH = 1.0 - 1e-16

_NORMALIZATION_TOL = 1e-9


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator: identical streams on every platform for a given seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(master: int, index: int) -> int:
    """Derive an independent child seed from (master, index)."""
    state = np.random.SeedSequence([int(master), int(index)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def as_matrix(name: str, data, dim: Optional[int] = None) -> EmbeddingMatrix:
    """Coerce to a 2-D float64 matrix and check it is finite."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"'{name}' must be a 2-D matrix", arr.shape)
    if dim is not None and arr.shape[1] != dim:
        raise ShapeError(f"'{name}' has dim {arr.shape[1]}, expected {dim}", arr.shape)
    check_finite(name, arr)
    return arr


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(name)


def ordered_sum(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sequential left-to-right sum along an axis."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[axis] == 0:
        return np.sum(values, axis=axis)
    return np.take(np.add.accumulate(values, axis=axis), -1, axis=axis)


def ordered_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b with the contraction index accumulated in ascending order."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError("inner dimensions differ", a.shape, b.shape)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for t in range(a.shape[1]):
        out += np.multiply.outer(a[:, t], b[t, :])
    return out


def batch_contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """aᵀ @ b reduced over the (long) batch axis with a single-threaded fixed-order kernel."""
    if a.shape[0] != b.shape[0]:
        raise ShapeError("batch dimensions differ", a.shape, b.shape)
    return np.einsum("mi,mj->ij", a, b, optimize=False)


def matmul_scores(inputs: EmbeddingMatrix, targets: EmbeddingMatrix) -> np.ndarray:
    """
    Inner-product scores between every input row and every target row.

    Args:
        inputs: (m, D) query embeddings f(x)
        targets: (N, D) target embeddings g(y)

    Returns:
        (m, N) matrix with entry (i, j) = <inputs[i], targets[j]>
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs.reshape(1, -1)
    if targets.ndim != 2 or inputs.ndim != 2 or inputs.shape[1] != targets.shape[1]:
        raise ShapeError("score dimension mismatch between inputs and targets",
                         inputs.shape, targets.shape)
    return ordered_matmul(inputs, targets.T)


def _check_logits(logits: np.ndarray, beta: float) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    check_finite("logits", logits)
    return logits


def log_softmax(logits, beta: float = 1.0) -> np.ndarray:
    """Row-wise log softmax(beta * logits) via a max-shifted log-sum-exp."""
    logits = _check_logits(logits, beta)
    z = beta * logits
    shifted = z - np.max(z, axis=-1, keepdims=True)
    lse = np.log(ordered_sum(np.exp(shifted), axis=-1))
    return shifted - np.expand_dims(lse, -1)


def softmax(logits, beta: float = 1.0) -> np.ndarray:
    """Row-wise softmax(beta * logits); works on a vector or a matrix of rows."""
    return np.exp(log_softmax(logits, beta))


def log_sum_exp(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    top = np.max(values, axis=-1, keepdims=True)
    return np.squeeze(top, -1) + np.log(ordered_sum(np.exp(values - top), axis=-1))


def top_k(scores, k: int) -> np.ndarray:
    """
    Indices of the k largest scores.

    Ties go to the smaller index; the result is ordered by (score desc, index asc)
    and has length min(k, N).
    """
    if k < 1:
        raise ValueError(f"top_k needs k >= 1, got {k}")
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = scores.size
    k = min(k, n)
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    if k < n:
        # kth-largest threshold, then keep every index tied with it
        threshold = np.partition(scores, n - k)[n - k]
        candidates = np.flatnonzero(scores >= threshold)
    else:
        candidates = np.arange(n)
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:k]].astype(np.int64)


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = np.clip(rng.random(shape), _U_LOW, _U_HIGH)
    return -np.log(-np.log(u))


def gumbel_max_sample(logits, beta: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """Sample k indices without replacement by perturbing beta*logits with Gumbel noise."""
    logits = _check_logits(logits, beta).ravel()
    if k > logits.size:
        raise ValueError(f"cannot draw {k} samples without replacement from {logits.size} items")
    perturbed = beta * logits + gumbel_noise(logits.size, rng)
    return top_k(perturbed, k)


def categorical_sample(probs, rng: np.random.Generator) -> np.ndarray:
    """One draw per row from row-normalized probabilities (inverse CDF)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs.reshape(1, -1)
    cdf = np.add.accumulate(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    draws = np.sum(cdf <= u[:, None], axis=1)
    return np.minimum(draws, probs.shape[1] - 1).astype(np.int64)


def _check_distribution(name: str, p: np.ndarray) -> None:
    check_finite(name, p)
    if np.any(p < 0):
        raise ValueError(f"'{name}' has negative entries")
    total = float(ordered_sum(p))
    if abs(total - 1.0) > _NORMALIZATION_TOL:
        raise ValueError(f"'{name}' is not normalized (sums to {total!r})")


def kl_divergence(p, q) -> float:
    """KL(p || q) with 0 ln 0 = 0; raises SupportError when q_i = 0 < p_i."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ShapeError("kl_divergence length mismatch", p.shape, q.shape)
    _check_distribution("p", p)
    _check_distribution("q", q)
    bad = np.flatnonzero((q == 0) & (p > 0))
    if bad.size:
        raise SupportError(int(bad[0]))
    mask = p > 0
    terms = np.zeros_like(p)
    terms[mask] = p[mask] * (np.log(p[mask]) - np.log(q[mask]))
    return max(float(ordered_sum(terms)), 0.0)


def kl_from_logits(logits_p, logits_q, beta: float) -> np.ndarray:
    """
    Row-wise KL(softmax(beta*logits_p) || softmax(beta*logits_q)) computed in log space.

    Used for full-support metrics where one distribution may underflow to 0.
    """
    log_p = log_softmax(logits_p, beta)
    log_q = log_softmax(logits_q, beta)
    if log_p.shape != log_q.shape:
        raise ShapeError("kl_from_logits shape mismatch", log_p.shape, log_q.shape)
    p = np.exp(log_p)
    return np.maximum(ordered_sum(p * (log_p - log_q), axis=-1), 0.0)


def tv_distance(p, q) -> float:
    """Total variation distance 0.5 * sum |p_i - q_i|."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ShapeError("tv_distance length mismatch", p.shape, q.shape)
    return 0.5 * float(ordered_sum(np.abs(p - q)))


def tv_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    if p.shape != q.shape:
        raise ShapeError("tv_rows shape mismatch", p.shape, q.shape)
    return 0.5 * ordered_sum(np.abs(p - q), axis=-1)


def unit_directions(n: int, dim: int, rng: np.random.Generator, norm: float = 1.0) -> np.ndarray:
    """n isotropic random directions scaled to the given norm."""
    z = rng.standard_normal((n, dim))
    lengths = np.sqrt(ordered_sum(z * z, axis=1)).reshape(-1, 1)
    lengths[lengths == 0] = 1.0
    return norm * z / lengths


def median(values: Sequence[float]) -> float:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.median(vals)) if vals else float("nan")
