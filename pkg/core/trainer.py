# core/trainer.py
"""
Training loops.

- train_corrector_isolated: warm-up training of h alone on synthetic g'/g pairs,
  with patience-based stopping.
- train_joint: dual-encoder retrieval training where subsets are chosen from a
  stale (optionally corrected) buffer and the corrector learns alongside.
- train_rlm: retrieval-augmented reader training with perplexity distillation.

Encoder updates and corrector updates are separate optimizer steps; each one
asserts the other side's gradient buffers are still zero.
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.buffer import TargetBuffer, init_from_encoder, refresh, staleness_l1
from core.errors import ConfigError, DivergenceError
from core.net import INIT_MODES, MlpNet, MlpSpec, init_net
from core.numkernel import (derive_seed, gumbel_max_sample, kl_from_logits, log_softmax, make_rng,
                            matmul_scores, ordered_sum, top_k)
from core.optim import AdamState, step_nets
from core.softmax_approx import (SUBSET_MODES, Scorer, batch_corrector_loss_ce, batch_task_loss_ce,
                                 corrector_loss_mse, per_example_corrector_loss_ce, reader_nll,
                                 rlm_losses, select_subset)
from core.synth import SynthTask
from utils.config_utils import config_digest, to_plain
from utils.log_utils import log_step_record

logger = logging.getLogger(__name__)

CORRECTOR_LOSSES = ("ce", "mse")
SUBSET_SOURCES = ("corrected", "stale", "in_batch")
JOINT_ARMS = ("corrector", "stale", "exhaustive", "in_batch")
RLM_ARMS = ("corrector", "frozen", "exhaustive", "no_retrieval")
DEFAULT_RECALL_KS = (1, 5, 10, 20, 100)
EXHAUSTIVE_REFRESH_EVERY = 500

_INIT_STREAM, _SAMPLE_STREAM = 0, 1


@dataclass
class ExperimentReport:
    config_digest: str
    arm: str = ""
    steps: List[dict] = field(default_factory=list)
    evals: List[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return to_plain(asdict(self))

    @property
    def last_eval(self) -> dict:
        return self.evals[-1] if self.evals else {}


@dataclass
class TrainedModels:
    query_encoder: Optional[MlpNet] = None
    target_encoder: Optional[MlpNet] = None
    corrector: Optional[MlpNet] = None
    reader: Optional[MlpNet] = None
    buffer: Optional[TargetBuffer] = None

    def save(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        for name in ("query_encoder", "target_encoder", "corrector", "reader"):
            net = getattr(self, name)
            if net is not None:
                net.save(os.path.join(out_dir, f"{name}.bin"))
        if self.buffer is not None:
            self.buffer.save(os.path.join(out_dir, "buffer.bin"))


# --- warm-up: corrector alone ------------------------------------------------

@dataclass
class IsolatedConfig:
    learning_rate: float = 0.03
    max_epochs: int = 1000
    patience: int = 100
    batch_size: int = 128
    loss: str = "ce"
    subset_mode: str = "pool"
    samples_per_query: int = 32
    corrector_init: str = "zero_residual"
    min_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.loss not in CORRECTOR_LOSSES:
            raise ConfigError("loss", f"must be one of {CORRECTOR_LOSSES}, got {self.loss!r}")
        if self.subset_mode not in ("pool", "gumbel"):
            raise ConfigError("subset_mode", f"must be 'pool' or 'gumbel', got {self.subset_mode!r}")
        for name in ("batch_size", "samples_per_query"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        for name in ("max_epochs", "patience"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")


def corrector_spec(dim: int, width: int, depth: int) -> MlpSpec:
    """Residual D -> D corrector with depth hidden layers of the given width."""
    return MlpSpec(dim, (width,) * depth, dim, residual=True)


def _sample_pool(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("sample_fraction", f"must lie in (0, 1], got {fraction}")
    size = max(1, math.ceil(fraction * n))
    if size >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=size, replace=False))


def _isolated_step(corrector: MlpNet, queries: np.ndarray, fresh: np.ndarray, stale: np.ndarray,
                   beta: float, config: IsolatedConfig, rng: np.random.Generator) -> float:
    corrected, cache = corrector.forward(stale)
    if config.subset_mode == "pool":
        if config.loss == "ce":
            result = batch_corrector_loss_ce(queries, fresh, corrected, beta)
        else:
            result = corrector_loss_mse(fresh, corrected)
        corrector.backward(cache, result.grad_targets)
        return result.loss

    # gumbel: each query sees its own sample from P over the pool
    k = min(config.samples_per_query, fresh.shape[0])
    scores = matmul_scores(queries, fresh)
    subsets = np.stack([gumbel_max_sample(scores[i], beta, k, rng) for i in range(queries.shape[0])])
    grad = np.zeros_like(corrected)
    if config.loss == "ce":
        result = per_example_corrector_loss_ce(queries, fresh[subsets], corrected[subsets], beta)
        np.add.at(grad, subsets.ravel(), result.grad_targets.reshape(-1, grad.shape[1]))
    else:
        rows = np.unique(subsets)
        result = corrector_loss_mse(fresh[rows], corrected[rows])
        grad[rows] = result.grad_targets
    corrector.backward(cache, grad)
    return result.loss


def train_corrector_isolated(task: SynthTask, spec: MlpSpec, sample_fraction: float,
                             config: IsolatedConfig) -> Tuple[MlpNet, ExperimentReport]:
    """
    Fit h so that P_h matches P using only a fraction of the targets.

    An epoch is one pass over the training queries. Training stops once the
    epoch loss has not improved for `patience` epochs or after `max_epochs`.
    The reported KL(P‖P_h) is over the probe queries with full support.
    """
    rng = make_rng(config.seed)
    corrector = init_net(spec, config.corrector_init, rng)
    pool = _sample_pool(task.n_targets, sample_fraction, rng)
    fresh, stale = task.true_targets[pool], task.stale_targets[pool]
    adam = AdamState.for_nets([corrector], config.learning_rate)
    digest = config_digest({"isolated": asdict(config), "spec": spec.to_dict(),
                            "sample_fraction": sample_fraction,
                            "task": task.config.to_dict() if task.config else None})
    report = ExperimentReport(digest, arm="isolated")

    m = task.queries.shape[0]
    best, since_best, epoch = math.inf, 0, 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, config.batch_size):
            batch = task.queries[order[start:start + config.batch_size]]
            loss = _isolated_step(corrector, batch, fresh, stale, task.beta, config, rng)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, "corrector_loss")
            step_nets([corrector], adam)
            total += loss * batch.shape[0]
        epoch_loss = total / m
        record = {"epoch": epoch, "loss": epoch_loss}
        report.steps.append(record)
        log_step_record(record)
        if epoch_loss < best - config.min_delta:
            best, since_best = epoch_loss, 0
        else:
            since_best += 1
            if since_best >= config.patience:
                logger.info(f"Early stop at epoch {epoch}: no improvement for {config.patience} epochs")
                break

    corrected_all = corrector(task.stale_targets)
    probe_scores = matmul_scores(task.probe_queries, task.true_targets)
    final_kl = kl_from_logits(probe_scores, matmul_scores(task.probe_queries, corrected_all), task.beta)
    stale_kl = kl_from_logits(probe_scores, matmul_scores(task.probe_queries, task.stale_targets), task.beta)
    report.summary = {
        "final_kl": float(ordered_sum(final_kl) / final_kl.size),
        "staleness_kl": float(ordered_sum(stale_kl) / stale_kl.size),
        "epochs": epoch,
        "param_count": spec.parameter_count,
        "sample_fraction": sample_fraction,
        "pool_size": int(pool.size),
        "best_loss": best if math.isfinite(best) else None,
    }
    logger.info(f"Isolated corrector ({spec.parameter_count} params, fraction {sample_fraction}): "
                f"KL(P||P_h)={report.summary['final_kl']:.5f} vs KL(P||P_g')={report.summary['staleness_kl']:.5f}")
    return corrector, report


# --- joint and retrieval-augmented training -----------------------------------

@dataclass
class TrainConfig:
    arm: str = "corrector"
    steps: int = 2000
    batch_size: int = 128
    k_hard: int = 64
    k_uniform: int = 64
    subset_mode: str = "topk"
    subset_source: str = "corrected"
    corrector_loss: str = "ce"
    corrector_loss_weight: float = 10.0
    refresh_every: int = 0
    encoder_lr: float = 1e-3
    corrector_lr: float = 1e-3
    reader_lr: float = 1e-3
    encoder_hidden_dims: Tuple[int, ...] = (16,)
    encoder_init: str = "zero_residual"
    encoder_init_scale: float = 1.0
    corrector_hidden_dims: Tuple[int, ...] = (16,)
    reader_hidden_dims: Tuple[int, ...] = (32,)
    retrieve_k: int = 32
    clip_norm: Optional[float] = None
    eval_every: int = 200
    eval_ks: Tuple[int, ...] = DEFAULT_RECALL_KS
    n_kl_probes: int = 64
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("encoder_hidden_dims", "corrector_hidden_dims", "reader_hidden_dims", "eval_ks"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        for name in ("steps", "k_hard", "k_uniform", "refresh_every", "eval_every", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")
        if self.retrieve_k < 1:
            raise ConfigError("retrieve_k", f"must be >= 1, got {self.retrieve_k}")
        for name in ("encoder_lr", "corrector_lr", "reader_lr", "corrector_loss_weight", "encoder_init_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")
        if self.encoder_init not in INIT_MODES:
            raise ConfigError("encoder_init", f"must be one of {INIT_MODES}, got {self.encoder_init!r}")
        if self.subset_mode not in SUBSET_MODES:
            raise ConfigError("subset_mode", f"must be one of {SUBSET_MODES}, got {self.subset_mode!r}")
        if self.subset_source not in SUBSET_SOURCES:
            raise ConfigError("subset_source", f"must be one of {SUBSET_SOURCES}, got {self.subset_source!r}")
        if self.corrector_loss not in CORRECTOR_LOSSES:
            raise ConfigError("corrector_loss", f"must be one of {CORRECTOR_LOSSES}, got {self.corrector_loss!r}")
        if self.arm not in JOINT_ARMS + RLM_ARMS:
            raise ConfigError("arm", f"unknown arm {self.arm!r}")


def joint_arm(config: TrainConfig, arm: str) -> TrainConfig:
    """Preset for one joint-training arm; exhaustive keeps an explicit refresh_every."""
    if arm not in JOINT_ARMS:
        raise ConfigError("arm", f"joint arms are {JOINT_ARMS}, got {arm!r}")
    if arm == "corrector":
        return replace(config, arm=arm, subset_source="corrected", refresh_every=0)
    if arm == "stale":
        return replace(config, arm=arm, subset_source="stale", refresh_every=0)
    if arm == "exhaustive":
        return replace(config, arm=arm, subset_source="stale",
                       refresh_every=config.refresh_every or EXHAUSTIVE_REFRESH_EVERY)
    return replace(config, arm=arm, subset_source="in_batch", refresh_every=0)


def rlm_arm(config: TrainConfig, arm: str) -> TrainConfig:
    if arm not in RLM_ARMS:
        raise ConfigError("arm", f"retrieval-augmented arms are {RLM_ARMS}, got {arm!r}")
    if arm == "exhaustive":
        return replace(config, arm=arm, subset_source="stale",
                       refresh_every=config.refresh_every or EXHAUSTIVE_REFRESH_EVERY)
    if arm == "corrector":
        return replace(config, arm=arm, subset_source="corrected", refresh_every=0)
    return replace(config, arm=arm, subset_source="stale", refresh_every=0)


def default_encoder_specs(dim: int, config: TrainConfig) -> Tuple[MlpSpec, MlpSpec]:
    spec = MlpSpec(dim, config.encoder_hidden_dims, dim, residual=True)
    return spec, spec


def default_corrector_spec(dim: int, config: TrainConfig) -> MlpSpec:
    return MlpSpec(dim, config.corrector_hidden_dims, dim, residual=True)


def default_reader_spec(dim: int, vocab_size: int, config: TrainConfig) -> MlpSpec:
    return MlpSpec(2 * dim, config.reader_hidden_dims, vocab_size)


def _init_models(task: SynthTask, encoder_specs, corr_spec: MlpSpec, config: TrainConfig,
                 reader_spec: Optional[MlpSpec] = None) -> TrainedModels:
    # every arm draws the same initial nets from the same stream
    rng = make_rng(derive_seed(config.seed, _INIT_STREAM))
    f_spec, g_spec = encoder_specs
    if g_spec.out_dim != f_spec.out_dim or corr_spec.in_dim != g_spec.out_dim:
        raise ConfigError("encoder_specs", "query, target and corrector dimensions disagree")
    f = init_net(f_spec, config.encoder_init if f_spec.residual else "he_normal", rng, config.encoder_init_scale)
    g = init_net(g_spec, config.encoder_init if g_spec.residual else "he_normal", rng, config.encoder_init_scale)
    h = init_net(corr_spec, "zero_residual", rng)
    reader = init_net(reader_spec, "he_normal", rng) if reader_spec is not None else None
    buffer = init_from_encoder(g, task.true_targets)
    return TrainedModels(f, g, h, reader, buffer)


def _assert_zero(nets: Sequence[MlpNet], what: str) -> None:
    for net in nets:
        if not net.grad_is_zero():
            raise RuntimeError(f"{what} update leaked gradient into another net")


def _check_loss(value: float, step: int, name: str) -> None:
    if not math.isfinite(value):
        raise DivergenceError(step, name)


def _batch_indices(m: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if batch_size <= m:
        return rng.choice(m, size=batch_size, replace=False)
    return rng.integers(0, m, size=batch_size)


def _selection_embeddings(models: TrainedModels, config: TrainConfig) -> np.ndarray:
    stale = models.buffer.rows()
    return models.corrector(stale) if config.subset_source == "corrected" else stale


def evaluate_recall(encoders: Tuple[Optional[MlpNet], Optional[MlpNet]], task: SynthTask,
                    ks: Sequence[int] = DEFAULT_RECALL_KS, queries: Optional[np.ndarray] = None,
                    labels: Optional[np.ndarray] = None) -> Dict[str, float]:
    """
    Brute-force recall@k with the fresh encoders (None means identity).

    The label's rank counts strictly higher scores plus ties at smaller indices,
    the same order top_k uses.
    """
    f, g = encoders
    queries = task.probe_queries if queries is None else queries
    labels = task.probe_labels if labels is None else labels
    if labels is None:
        raise ValueError("recall needs labelled queries")
    fx = queries if f is None else f(queries)
    gy = task.true_targets if g is None else g(task.true_targets)
    scores = matmul_scores(fx, gy)
    label_scores = scores[np.arange(len(labels)), labels][:, None]
    index = np.arange(scores.shape[1])[None, :]
    ranks = np.sum(scores > label_scores, axis=1) + np.sum((scores == label_scores) & (index < labels[:, None]),
                                                           axis=1)
    return {f"recall@{k}": float(np.mean(ranks < k)) for k in ks}


def _kl_metrics(models: TrainedModels, task: SynthTask, n_probes: int) -> Dict[str, float]:
    probes = task.probe_queries[:n_probes]
    fx = models.query_encoder(probes)
    fresh = matmul_scores(fx, models.target_encoder(task.true_targets))
    stale_rows = models.buffer.rows()
    kl_h = kl_from_logits(fresh, matmul_scores(fx, models.corrector(stale_rows)), task.beta)
    kl_stale = kl_from_logits(fresh, matmul_scores(fx, stale_rows), task.beta)
    return {"kl_p_ph": float(ordered_sum(kl_h) / kl_h.size),
            "kl_p_pstale": float(ordered_sum(kl_stale) / kl_stale.size)}


def _maybe_checkpoint(models: TrainedModels, config: TrainConfig, out_dir: Optional[str], step: int) -> None:
    if out_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
        models.save(os.path.join(out_dir, "checkpoints", f"step_{step:07d}"))


def _is_eval_step(step: int, config: TrainConfig) -> bool:
    return step == config.steps or (config.eval_every > 0 and step % config.eval_every == 0)


def _joint_eval(models: TrainedModels, task: SynthTask, config: TrainConfig, step: int) -> dict:
    record = {"step": step}
    record.update(evaluate_recall((models.query_encoder, models.target_encoder), task, config.eval_ks))
    record["staleness_l1"] = staleness_l1(models.buffer, models.target_encoder, task.true_targets).mean
    record.update(_kl_metrics(models, task, config.n_kl_probes))
    record["reembed_counter"] = models.buffer.reembed_counter
    return record


def _joint_subset(fx: np.ndarray, labels: np.ndarray, selection: np.ndarray, scorer: Scorer,
                  beta: float, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    parts = [labels]
    if config.subset_source != "in_batch" and config.k_hard:
        for i in range(fx.shape[0]):
            parts.append(select_subset(scorer, fx[i], beta, config.k_hard, 0, config.subset_mode,
                                       label=int(labels[i]), rng=rng, target_embeddings=selection))
    if config.k_uniform:
        parts.append(rng.choice(scorer.n_targets, size=min(config.k_uniform, scorer.n_targets), replace=False))
    return np.unique(np.concatenate(parts).astype(np.int64))


def train_joint(task: SynthTask, encoder_specs: Tuple[MlpSpec, MlpSpec], corr_spec: MlpSpec,
                config: TrainConfig, out_dir: Optional[str] = None) -> Tuple[TrainedModels, ExperimentReport]:
    """
    Joint dual-encoder and corrector training.

    Per step: refresh the buffer if the policy says so, sample a batch, select
    hard candidates from h(B) (or B), encode only the selected targets with
    the current g, take an encoder step on the truncated-softmax task loss,
    then a corrector step on KL(P̃‖P̃_h) or MSE. Fresh rows are never written
    back to the buffer.
    """
    if task.labels is None:
        raise ValueError("joint training needs a labelled task")
    models = _init_models(task, encoder_specs, corr_spec, config)
    f, g, h, buffer = models.query_encoder, models.target_encoder, models.corrector, models.buffer
    rng = make_rng(derive_seed(config.seed, _SAMPLE_STREAM))
    encoder_adam = AdamState.for_nets([f, g], config.encoder_lr, clip_norm=config.clip_norm)
    corrector_adam = AdamState.for_nets([h], config.corrector_lr, clip_norm=config.clip_norm)
    train_corrector = config.subset_source == "corrected"
    scorer = Scorer.stale(buffer)
    beta = task.beta
    digest = config_digest({"train": asdict(config), "task": task.config.to_dict() if task.config else None})
    report = ExperimentReport(digest, arm=config.arm)
    logger.info(f"Joint training arm={config.arm} steps={config.steps} refresh_every={config.refresh_every}")

    report.evals.append(_joint_eval(models, task, config, 0))
    for t in range(1, config.steps + 1):
        if config.refresh_every and t % config.refresh_every == 0:
            refresh(buffer, g, task.true_targets, "all", step=t)

        idx = _batch_indices(task.queries.shape[0], config.batch_size, rng)
        labels = task.labels[idx]
        fx, f_cache = f.forward(task.queries[idx])
        selection = _selection_embeddings(models, config) if config.subset_source != "in_batch" else None
        subset = _joint_subset(fx, labels, selection, scorer, beta, config, rng)

        fresh, g_cache = g.forward(task.true_targets[subset])
        task_result = batch_task_loss_ce(fx, fresh, np.searchsorted(subset, labels), beta)
        _check_loss(task_result.loss, t, "task_loss")
        f.backward(f_cache, task_result.grad_queries)
        g.backward(g_cache, task_result.grad_targets)
        _assert_zero([h], "encoder")
        step_nets([f, g], encoder_adam)

        record = {"step": t, "task_loss": task_result.loss, "subset_size": int(subset.size)}
        if train_corrector:
            corrected, h_cache = h.forward(buffer.rows(subset))
            if config.corrector_loss == "ce":
                corr_result = batch_corrector_loss_ce(fx, fresh, corrected, beta)
            else:
                corr_result = corrector_loss_mse(fresh, corrected)
            _check_loss(corr_result.loss, t, "corrector_loss")
            h.backward(h_cache, config.corrector_loss_weight * corr_result.grad_targets)
            _assert_zero([f, g], "corrector")
            step_nets([h], corrector_adam)
            record["corrector_loss"] = corr_result.loss
        report.steps.append(record)
        log_step_record(record)

        if _is_eval_step(t, config):
            record = _joint_eval(models, task, config, t)
            report.evals.append(record)
            logger.info(f"[{config.arm}] step {t}: recall@1={record.get('recall@1', float('nan')):.4f} "
                        f"reembed={record['reembed_counter']}")
        _maybe_checkpoint(models, config, out_dir, t)

    report.summary = {**report.last_eval, "arm": config.arm, "steps": config.steps,
                      "reembed_counter": buffer.reembed_counter}
    return models, report


# --- retrieval-augmented reader -------------------------------------------

def _pair_inputs(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return np.concatenate([queries, targets], axis=1)


def answer_accuracy(models: TrainedModels, task: SynthTask, config: TrainConfig,
                    queries: Optional[np.ndarray] = None, answers: Optional[np.ndarray] = None) -> float:
    """Predict argmax_a Σ_y P(y|x) P(a|x,y) over the fresh top-k and score against the answers."""
    queries = task.probe_queries if queries is None else queries
    answers = task.probe_answers if answers is None else answers
    if answers is None:
        raise ValueError("accuracy needs answers")
    reader = models.reader
    if config.arm == "no_retrieval":
        logits = reader(_pair_inputs(queries, np.zeros_like(queries)))
        return float(np.mean(np.argmax(logits, axis=1) == answers))
    fx = models.query_encoder(queries)
    gy = models.target_encoder(task.true_targets)
    scores = matmul_scores(fx, gy)
    k = min(config.retrieve_k, task.n_targets)
    correct = 0
    for i in range(queries.shape[0]):
        top = top_k(scores[i], k)
        p = np.exp(log_softmax(scores[i, top], task.beta))
        pi = np.exp(log_softmax(reader(_pair_inputs(np.repeat(queries[i:i + 1], k, axis=0),
                                                    task.true_targets[top]))))
        marginal = ordered_sum(p[:, None] * pi, axis=0)
        correct += int(np.argmax(marginal) == answers[i])
    return correct / queries.shape[0]


def _rlm_eval(models: TrainedModels, task: SynthTask, config: TrainConfig, step: int) -> dict:
    record = {"step": step, "accuracy": answer_accuracy(models, task, config),
              "reembed_counter": models.buffer.reembed_counter}
    if config.arm != "no_retrieval":
        record["staleness_l1"] = staleness_l1(models.buffer, models.target_encoder, task.true_targets).mean
        record.update(_kl_metrics(models, task, config.n_kl_probes))
    return record


def train_rlm(task: SynthTask, retriever_specs: Tuple[MlpSpec, MlpSpec], reader_spec: MlpSpec,
              corr_spec: MlpSpec, config: TrainConfig,
              out_dir: Optional[str] = None) -> Tuple[TrainedModels, ExperimentReport]:
    """
    Retrieval-augmented training.

    Each example retrieves its own top-k subset under h(B) (corrector arm) or B.
    Reader loss −log P_LM(a|x) and the perplexity-distillation retriever loss
    are averaged; the corrector trains on KL(P̃‖P̃_h) over each subset.
    The frozen arm never updates the retriever, and no_retrieval feeds the
    reader the query alone.
    """
    if task.answers is None or task.answer_weights is None:
        raise ValueError("retrieval-augmented training needs a task with answers")
    if reader_spec.in_dim != 2 * task.dim or reader_spec.out_dim != task.vocab_size:
        raise ConfigError("reader_spec", f"must map {2 * task.dim} -> {task.vocab_size}")
    models = _init_models(task, retriever_specs, corr_spec, config, reader_spec)
    f, g, h, reader, buffer = (models.query_encoder, models.target_encoder, models.corrector,
                               models.reader, models.buffer)
    rng = make_rng(derive_seed(config.seed, _SAMPLE_STREAM))
    retriever_lr = 0.0 if config.arm == "frozen" else config.encoder_lr
    retriever_adam = AdamState.for_nets([f, g], retriever_lr, clip_norm=config.clip_norm)
    reader_adam = AdamState.for_nets([reader], config.reader_lr, clip_norm=config.clip_norm)
    corrector_adam = AdamState.for_nets([h], config.corrector_lr, clip_norm=config.clip_norm)
    train_retriever = config.arm not in ("frozen", "no_retrieval")
    train_corrector = config.subset_source == "corrected" and config.arm != "no_retrieval"
    scorer = Scorer.stale(buffer)
    beta = task.beta
    k = min(config.retrieve_k, task.n_targets)
    digest = config_digest({"train": asdict(config), "task": task.config.to_dict() if task.config else None,
                            "vocab_size": task.vocab_size})
    report = ExperimentReport(digest, arm=config.arm)
    logger.info(f"Retrieval-augmented training arm={config.arm} k={k} steps={config.steps}")

    report.evals.append(_rlm_eval(models, task, config, 0))
    for t in range(1, config.steps + 1):
        if config.refresh_every and t % config.refresh_every == 0:
            refresh(buffer, g, task.true_targets, "all", step=t)

        idx = _batch_indices(task.queries.shape[0], config.batch_size, rng)
        x, answers = task.queries[idx], task.answers[idx]
        b = x.shape[0]

        if config.arm == "no_retrieval":
            logits, r_cache = reader.forward(_pair_inputs(x, np.zeros_like(x)))
            result = reader_nll(logits, answers)
            _check_loss(result.loss, t, "reader_loss")
            reader.backward(r_cache, result.grad_targets)
            step_nets([reader], reader_adam)
            record = {"step": t, "reader_loss": result.loss}
        else:
            fx, f_cache = f.forward(x)
            selection = _selection_embeddings(models, config)
            subsets = np.stack([select_subset(scorer, fx[i], beta, k, 0, config.subset_mode, rng=rng,
                                              target_embeddings=selection) for i in range(b)])
            flat = subsets.ravel()
            fresh, g_cache = g.forward(task.true_targets[flat])
            logits, r_cache = reader.forward(_pair_inputs(np.repeat(x, k, axis=0), task.true_targets[flat]))
            result = rlm_losses(fx, fresh.reshape(b, k, -1), logits.reshape(b, k, -1), answers, beta)
            _check_loss(result.loss, t, "rlm_loss")
            reader.backward(r_cache, result.grad_reader_logits.reshape(b * k, -1))
            if train_retriever:
                f.backward(f_cache, result.grad_queries)
                g.backward(g_cache, result.grad_targets.reshape(b * k, -1))
            _assert_zero([h], "retriever")
            step_nets([reader], reader_adam)
            if train_retriever:
                step_nets([f, g], retriever_adam)
            record = {"step": t, "loss": result.loss, "reader_loss": result.reader_loss,
                      "retriever_loss": result.retriever_loss}
            if train_corrector:
                corrected, h_cache = h.forward(buffer.rows(flat))
                corr_result = per_example_corrector_loss_ce(fx, fresh.reshape(b, k, -1),
                                                            corrected.reshape(b, k, -1), beta)
                _check_loss(corr_result.loss, t, "corrector_loss")
                h.backward(h_cache, config.corrector_loss_weight * corr_result.grad_targets.reshape(b * k, -1))
                _assert_zero([f, g, reader], "corrector")
                step_nets([h], corrector_adam)
                record["corrector_loss"] = corr_result.loss
        report.steps.append(record)
        log_step_record(record)

        if _is_eval_step(t, config):
            record = _rlm_eval(models, task, config, t)
            report.evals.append(record)
            logger.info(f"[{config.arm}] step {t}: accuracy={record['accuracy']:.4f}")
        _maybe_checkpoint(models, config, out_dir, t)

    report.summary = {**report.last_eval, "arm": config.arm, "steps": config.steps,
                      "reembed_counter": buffer.reembed_counter}
    return models, report


def train_reader(task: SynthTask, reader_spec: MlpSpec, config: TrainConfig) -> Tuple[MlpNet, float]:
    """Train the reader alone with the gold target given; returns it with probe accuracy."""
    if task.answers is None or task.labels is None:
        raise ValueError("reader training needs labels and answers")
    reader = init_net(reader_spec, "he_normal", make_rng(derive_seed(config.seed, _INIT_STREAM)))
    rng = make_rng(derive_seed(config.seed, _SAMPLE_STREAM))
    adam = AdamState.for_nets([reader], config.reader_lr, clip_norm=config.clip_norm)
    for t in range(1, config.steps + 1):
        idx = _batch_indices(task.queries.shape[0], config.batch_size, rng)
        logits, cache = reader.forward(_pair_inputs(task.queries[idx], task.true_targets[task.labels[idx]]))
        result = reader_nll(logits, task.answers[idx])
        _check_loss(result.loss, t, "reader_loss")
        reader.backward(cache, result.grad_targets)
        step_nets([reader], adam)
    logits = reader(_pair_inputs(task.probe_queries, task.true_targets[task.probe_labels]))
    accuracy = float(np.mean(np.argmax(logits, axis=1) == task.probe_answers))
    logger.info(f"Reader alone: probe accuracy {accuracy:.4f}")
    return reader, accuracy
