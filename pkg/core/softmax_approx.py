# core/softmax_approx.py
"""
Scorer-backed target distributions, subset selection, and the losses of
joint and retrieval-augmented training.

Three scorers share one interface: the true encoder g, the stale buffer B,
and the corrected buffer h∘B. Losses return gradients with respect to the
embeddings they were computed from; callers push them through the nets.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from core.buffer import TargetBuffer
from core.errors import ConfigError, ShapeError
from core.net import MlpNet
from core.numkernel import (as_matrix, check_finite, gumbel_max_sample, log_softmax, matmul_scores,
                            ordered_matmul, ordered_sum, softmax, top_k)

logger = logging.getLogger(__name__)

SUBSET_MODES = ("topk", "gumbel")


class ScorerVariant(str, Enum):
    TRUE_ENCODER = "true_encoder"
    STALE_BUFFER = "stale_buffer"
    CORRECTED = "corrected"


@dataclass
class Scorer:
    """
    Source of target embeddings for one of P, P_{g'} or P_h.

    A true_encoder scorer with encoder=None treats targets_raw as g(y) itself.
    """
    variant: ScorerVariant
    encoder: Optional[MlpNet] = None
    targets_raw: Optional[np.ndarray] = None
    buffer: Optional[TargetBuffer] = None
    corrector: Optional[MlpNet] = None

    def __post_init__(self):
        if self.variant == ScorerVariant.TRUE_ENCODER and self.targets_raw is None:
            raise ConfigError("scorer", "true_encoder needs targets_raw")
        if self.variant in (ScorerVariant.STALE_BUFFER, ScorerVariant.CORRECTED) and self.buffer is None:
            raise ConfigError("scorer", f"{self.variant.value} needs a buffer")
        if self.variant == ScorerVariant.CORRECTED:
            if self.corrector is None:
                raise ConfigError("scorer", "corrected scorer needs a corrector")
            spec = self.corrector.spec
            if spec.in_dim != self.buffer.dim or spec.out_dim != self.buffer.dim:
                raise ConfigError("corrector", f"must map D={self.buffer.dim} to itself, "
                                               f"got {spec.in_dim} -> {spec.out_dim}")

    @classmethod
    def true_encoder(cls, targets_raw, encoder: Optional[MlpNet] = None) -> "Scorer":
        return cls(ScorerVariant.TRUE_ENCODER, encoder=encoder,
                   targets_raw=np.asarray(targets_raw, dtype=np.float64))

    @classmethod
    def stale(cls, buffer: TargetBuffer) -> "Scorer":
        return cls(ScorerVariant.STALE_BUFFER, buffer=buffer)

    @classmethod
    def corrected(cls, corrector: MlpNet, buffer: TargetBuffer) -> "Scorer":
        return cls(ScorerVariant.CORRECTED, buffer=buffer, corrector=corrector)

    @property
    def n_targets(self) -> int:
        if self.variant == ScorerVariant.TRUE_ENCODER:
            return self.targets_raw.shape[0]
        return self.buffer.n_rows

    def target_embeddings(self, rows=None) -> np.ndarray:
        """Embeddings of the given rows (all rows when None) under this scorer."""
        if self.variant == ScorerVariant.TRUE_ENCODER:
            raw = self.targets_raw if rows is None else self.targets_raw[np.asarray(rows, dtype=np.int64)]
            return raw if self.encoder is None else self.encoder(raw)
        stale = self.buffer.rows(rows)
        if self.variant == ScorerVariant.STALE_BUFFER:
            return stale
        return self.corrector(stale)


@dataclass
class TruncatedDistribution:
    """Softmax restricted to subset; keeps the query and target rows that produced it."""
    subset: np.ndarray
    logits: np.ndarray
    probs: np.ndarray
    beta: float
    query: np.ndarray
    target_rows: np.ndarray
    input_index: Optional[int] = None

    def position(self, target: int) -> int:
        hits = np.flatnonzero(self.subset == target)
        if hits.size == 0:
            raise ValueError(f"label {target} is not in the subset")
        return int(hits[0])


@dataclass
class LossResult:
    """Scalar loss plus gradients with respect to the embeddings it consumed."""
    loss: float
    grad_queries: Optional[np.ndarray] = None
    grad_targets: Optional[np.ndarray] = None


def _query_vector(x_vec, dim: Optional[int] = None) -> np.ndarray:
    x = np.asarray(x_vec, dtype=np.float64).ravel()
    if dim is not None and x.size != dim:
        raise ShapeError("query has the wrong dimension", x.shape, (dim,))
    check_finite("query", x)
    return x


def full_distribution(scorer: Scorer, x_vec, beta: float, target_embeddings=None) -> np.ndarray:
    """Brute-force P(y|x) over every target under the scorer."""
    emb = scorer.target_embeddings() if target_embeddings is None else target_embeddings
    if emb.shape[0] == 0:
        raise ValueError("full_distribution over an empty target set")
    x = _query_vector(x_vec, emb.shape[1])
    return softmax(matmul_scores(x, emb)[0], beta)


def select_subset(scorer: Scorer, x_vec, beta: float, k_hard: int, k_uniform: int,
                  mode: str = "topk", label: Optional[int] = None,
                  rng: Optional[np.random.Generator] = None, target_embeddings=None) -> np.ndarray:
    """
    Hard candidates (top-k or Gumbel-Max under the scorer) ∪ uniform draws ∪ {label}.

    Returns sorted unique indices. Duplicates are dropped, not refilled.
    """
    n = scorer.n_targets
    if k_hard < 0 or k_uniform < 0:
        raise ValueError("subset counts must be non-negative")
    if k_hard + k_uniform > n:
        raise ValueError(f"k_hard + k_uniform = {k_hard + k_uniform} exceeds {n} targets")
    if mode not in SUBSET_MODES:
        raise ConfigError("subset_mode", f"unknown mode {mode!r}")
    if (mode == "gumbel" or k_uniform) and rng is None:
        raise ValueError("an rng is required for gumbel or uniform selection")
    parts = []
    if k_hard:
        emb = scorer.target_embeddings() if target_embeddings is None else target_embeddings
        scores = matmul_scores(_query_vector(x_vec, emb.shape[1]), emb)[0]
        parts.append(top_k(scores, k_hard) if mode == "topk"
                     else gumbel_max_sample(scores, beta, k_hard, rng))
    if k_uniform:
        parts.append(rng.choice(n, size=k_uniform, replace=False))
    if label is not None:
        if not 0 <= label < n:
            raise IndexError(f"label {label} out of range for {n} targets")
        parts.append(np.array([label]))
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(parts).astype(np.int64))


def truncated_softmax(scorer: Scorer, x_vec, subset, beta: float,
                      input_index: Optional[int] = None, target_rows=None) -> TruncatedDistribution:
    """Softmax over the subset's logits only."""
    subset = np.asarray(subset, dtype=np.int64)
    if subset.size == 0:
        raise ValueError("truncated_softmax over an empty subset")
    rows = scorer.target_embeddings(subset) if target_rows is None else as_matrix("target_rows", target_rows)
    if rows.shape[0] != subset.size:
        raise ShapeError("one target row per subset member expected", rows.shape, subset.shape)
    x = _query_vector(x_vec, rows.shape[1])
    logits = matmul_scores(x, rows)[0]
    return TruncatedDistribution(subset=subset, logits=logits, probs=softmax(logits, beta), beta=beta,
                                 query=x, target_rows=rows, input_index=input_index)


# --- batched losses over a shared subset ---------------------------------

def batch_task_loss_ce(queries: np.ndarray, targets: np.ndarray, label_positions, beta: float) -> LossResult:
    """
    Mean over the batch of −log P̃(label|x) with P̃ the softmax over a shared subset.

    d loss / d score = β (P̃ − onehot) / batch; gradients flow to queries and targets.
    """
    queries = as_matrix("queries", queries)
    targets = as_matrix("targets", targets, queries.shape[1])
    pos = np.asarray(label_positions, dtype=np.int64).ravel()
    if pos.size != queries.shape[0]:
        raise ShapeError("one label position per query expected", pos.shape, queries.shape)
    b = queries.shape[0]
    scores = matmul_scores(queries, targets)
    log_p = log_softmax(scores, beta)
    loss = -float(ordered_sum(log_p[np.arange(b), pos])) / b
    d_scores = np.exp(log_p)
    d_scores[np.arange(b), pos] -= 1.0
    d_scores *= beta / b
    return LossResult(loss, ordered_matmul(d_scores, targets), ordered_matmul(d_scores.T, queries))


def batch_corrector_loss_ce(queries: np.ndarray, true_targets: np.ndarray,
                            corrected_targets: np.ndarray, beta: float) -> LossResult:
    """
    Mean over the batch of KL(P̃ ‖ P̃_h) on a shared subset.

    P̃ (fresh g) is a constant; only the corrected rows receive gradient,
    d loss / d score_h = β (P̃_h − P̃) / batch.
    """
    queries = as_matrix("queries", queries)
    true_targets = as_matrix("true_targets", true_targets, queries.shape[1])
    corrected_targets = as_matrix("corrected_targets", corrected_targets, queries.shape[1])
    if true_targets.shape != corrected_targets.shape:
        raise ShapeError("subset mismatch between P̃ and P̃_h", true_targets.shape, corrected_targets.shape)
    b = queries.shape[0]
    log_p = log_softmax(matmul_scores(queries, true_targets), beta)
    log_q = log_softmax(matmul_scores(queries, corrected_targets), beta)
    p = np.exp(log_p)
    per_row = np.maximum(ordered_sum(p * (log_p - log_q), axis=1), 0.0)
    loss = float(ordered_sum(per_row)) / b
    d_scores = (np.exp(log_q) - p) * (beta / b)
    return LossResult(loss, None, ordered_matmul(d_scores.T, queries))


def corrector_loss_mse(g_rows, corrected_rows) -> LossResult:
    """Mean over rows of ‖g(y) − h∘g'(y)‖²; gradient only into the corrected rows."""
    g_rows = as_matrix("g_rows", g_rows)
    corrected_rows = as_matrix("corrected_rows", corrected_rows)
    if g_rows.shape != corrected_rows.shape:
        raise ShapeError("corrector_loss_mse shape mismatch", g_rows.shape, corrected_rows.shape)
    n = g_rows.shape[0]
    if n == 0:
        return LossResult(0.0, None, np.zeros_like(corrected_rows))
    diff = corrected_rows - g_rows
    loss = float(ordered_sum(ordered_sum(diff * diff, axis=1))) / n
    return LossResult(loss, None, (2.0 / n) * diff)


# --- per-example forms ------------------------------------------------------

def task_loss_ce(p_true_trunc: TruncatedDistribution, label: int) -> LossResult:
    """−log P̃(label|x); gradients into f(x) (grad_queries, 1×D) and the subset's g rows."""
    pos = p_true_trunc.position(label)
    return batch_task_loss_ce(p_true_trunc.query.reshape(1, -1), p_true_trunc.target_rows,
                              [pos], p_true_trunc.beta)


def corrector_loss_ce(p_true_trunc: TruncatedDistribution, p_h_trunc: TruncatedDistribution) -> LossResult:
    """KL(P̃ ‖ P̃_h) on one subset; gradient only into the corrected rows."""
    if not np.array_equal(p_true_trunc.subset, p_h_trunc.subset):
        raise ValueError("P̃ and P̃_h are defined on different subsets")
    if not np.array_equal(p_true_trunc.query, p_h_trunc.query) or p_true_trunc.beta != p_h_trunc.beta:
        raise ValueError("P̃ and P̃_h come from different inputs")
    return batch_corrector_loss_ce(p_true_trunc.query.reshape(1, -1), p_true_trunc.target_rows,
                                   p_h_trunc.target_rows, p_true_trunc.beta)


# --- per-example subsets of equal size (retrieval-augmented training) -----

def _row_scores(queries: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """⟨x_i, rows[i, j]⟩ for queries (b, D) and rows (b, k, D)."""
    if rows.ndim != 3 or rows.shape[0] != queries.shape[0] or rows.shape[2] != queries.shape[1]:
        raise ShapeError("per-example rows must be (batch, k, dim)", rows.shape, queries.shape)
    return ordered_sum(rows * queries[:, None, :], axis=2)


def _rows_grad(d_scores: np.ndarray, queries: np.ndarray) -> np.ndarray:
    return d_scores[:, :, None] * queries[:, None, :]


def per_example_corrector_loss_ce(queries: np.ndarray, true_rows: np.ndarray, corrected_rows: np.ndarray,
                                  beta: float) -> LossResult:
    """Batch mean of KL(P̃_i ‖ P̃_h,i) with one subset per example; gradient into corrected rows (b, k, D)."""
    queries = as_matrix("queries", queries)
    if true_rows.shape != corrected_rows.shape:
        raise ShapeError("subset mismatch between P̃ and P̃_h", true_rows.shape, corrected_rows.shape)
    b = queries.shape[0]
    log_p = log_softmax(_row_scores(queries, true_rows), beta)
    log_q = log_softmax(_row_scores(queries, corrected_rows), beta)
    p = np.exp(log_p)
    per_row = np.maximum(ordered_sum(p * (log_p - log_q), axis=1), 0.0)
    d_scores = (np.exp(log_q) - p) * (beta / b)
    return LossResult(float(ordered_sum(per_row)) / b, None, _rows_grad(d_scores, queries))


@dataclass
class RlmLossResult:
    """
    loss = mean_i (L_i + L'_i) / 2 with L the perplexity-distillation retriever
    loss and L' the reader negative log-likelihood.
    """
    loss: float
    retriever_loss: float
    reader_loss: float
    grad_queries: np.ndarray
    grad_targets: np.ndarray
    grad_reader_logits: np.ndarray
    posterior: np.ndarray


def rlm_losses(queries: np.ndarray, target_rows: np.ndarray, reader_logits: np.ndarray,
               answers, beta: float) -> RlmLossResult:
    """
    Retrieval-augmented losses over per-example subsets.

    queries (b, D), target_rows (b, k, D) fresh g rows, reader_logits (b, k, V)
    for P(a|x, y). P_LM(a|x) = Σ_y P(a|x,y) P̃(y|x); P_a normalizes the reader
    likelihoods over the subset and is held constant for the retriever loss.
    """
    queries = as_matrix("queries", queries)
    answers = np.asarray(answers, dtype=np.int64).ravel()
    b, k = target_rows.shape[:2]
    if reader_logits.shape[:2] != (b, k) or answers.size != b:
        raise ShapeError("reader logits must be (batch, k, vocab)", reader_logits.shape, target_rows.shape)
    check_finite("reader_logits", reader_logits)
    log_p = log_softmax(_row_scores(queries, target_rows), beta)
    log_pi = log_softmax(reader_logits)
    log_r = log_pi[np.arange(b), :, answers]
    joint = log_r + log_p
    top = np.max(joint, axis=1, keepdims=True)
    log_plm = top[:, 0] + np.log(ordered_sum(np.exp(joint - top), axis=1))
    posterior = np.exp(joint - log_plm[:, None])
    p_a = np.exp(log_softmax(log_r))
    p = np.exp(log_p)

    reader_nll = -log_plm
    distill = -ordered_sum(p_a * log_p, axis=1)
    d_scores = (beta / (2.0 * b)) * ((p - posterior) + (p - p_a))
    grad_queries = ordered_sum(d_scores[:, :, None] * target_rows, axis=1)
    onehot = np.zeros_like(log_pi)
    onehot[np.arange(b), :, answers] = 1.0
    grad_logits = (0.5 / b) * posterior[:, :, None] * (np.exp(log_pi) - onehot)
    return RlmLossResult(
        loss=float(ordered_sum(0.5 * (distill + reader_nll))) / b,
        retriever_loss=float(ordered_sum(distill)) / b,
        reader_loss=float(ordered_sum(reader_nll)) / b,
        grad_queries=grad_queries,
        grad_targets=_rows_grad(d_scores, queries),
        grad_reader_logits=grad_logits,
        posterior=posterior,
    )


def reader_nll(logits: np.ndarray, answers) -> LossResult:
    """Mean −log softmax(logits)[answer]; grad_targets holds d loss / d logits."""
    logits = as_matrix("logits", logits)
    answers = np.asarray(answers, dtype=np.int64).ravel()
    b = logits.shape[0]
    log_pi = log_softmax(logits)
    loss = -float(ordered_sum(log_pi[np.arange(b), answers])) / b
    grad = np.exp(log_pi)
    grad[np.arange(b), answers] -= 1.0
    return LossResult(loss, None, grad / b)
