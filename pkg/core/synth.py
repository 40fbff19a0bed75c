# core/synth.py
"""
Synthetic retrieval data: stale target clouds, drift maps g' -> g, toy queries
and a parametric answer model for retrieval-augmented training.

Every generator is a pure function of its config and seed.
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Tuple

import numpy as np

from core.errors import ConfigError, ShapeError
from core.net import MlpNet, MlpSpec, init_net, load_net
from core.numkernel import (as_matrix, categorical_sample, derive_seed, kl_from_logits, log_softmax,
                            make_rng, matmul_scores, ordered_sum, unit_directions)
from utils.checkpoint_utils import load_buffer_checkpoint, save_buffer_checkpoint

logger = logging.getLogger(__name__)

# independent streams inside one task
_TARGET_STREAM, _DRIFT_STREAM, _QUERY_STREAM, _PROBE_STREAM = range(4)
ANSWER_STREAM = 4

TASK_MANIFEST = "task.json"


@dataclass
class SynthConfig:
    n_targets: int = 4096
    dim: int = 8
    n_mixture_components: int = 20
    sigma_means: float = 3.0
    sigma_comp: float = 1.0
    drift_hidden_dims: Tuple[int, ...] = (8,)
    drift_scale: float = 1.0
    beta: float = 20.0
    n_queries: int = 128
    n_probes: int = 256
    query_norm: float = 0.05
    label_noise: float = 0.05
    target_norm: float = 4.0
    seed: int = 0

    def __post_init__(self):
        self.drift_hidden_dims = tuple(int(h) for h in self.drift_hidden_dims)
        for name in ("n_targets", "dim", "n_mixture_components", "n_queries", "n_probes"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        for name in ("sigma_means", "sigma_comp", "drift_scale", "query_norm", "label_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")
        if self.beta <= 0:
            raise ConfigError("beta", f"must be > 0, got {self.beta}")
        if self.target_norm <= 0:
            raise ConfigError("target_norm", f"must be > 0, got {self.target_norm}")

    @property
    def drift_spec(self) -> MlpSpec:
        return MlpSpec(self.dim, self.drift_hidden_dims, self.dim, residual=True)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["drift_hidden_dims"] = list(self.drift_hidden_dims)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown SynthConfig key")
        return cls(**data)


@dataclass
class SynthTask:
    """
    Matrices standing in for f(x), g'(y) and g(y).

    queries/labels drive training, probe_queries/probe_labels drive evaluation.
    answers are filled in by gen_rlm_answers.
    """
    queries: np.ndarray
    stale_targets: np.ndarray
    true_targets: np.ndarray
    probe_queries: np.ndarray
    beta: float
    labels: Optional[np.ndarray] = None
    probe_labels: Optional[np.ndarray] = None
    answer_weights: Optional[np.ndarray] = None
    answers: Optional[np.ndarray] = None
    probe_answers: Optional[np.ndarray] = None
    drift_net: Optional[MlpNet] = None
    config: Optional[SynthConfig] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stale_targets.shape != self.true_targets.shape:
            raise ShapeError("stale and true targets differ", self.stale_targets.shape, self.true_targets.shape)
        for name in ("labels", "probe_labels"):
            labels = getattr(self, name)
            if labels is not None and labels.size and (labels.min() < 0 or labels.max() >= self.n_targets):
                raise ValueError(f"{name} must index the {self.n_targets} targets")

    @property
    def n_targets(self) -> int:
        return self.true_targets.shape[0]

    @property
    def dim(self) -> int:
        return self.true_targets.shape[1]

    @property
    def vocab_size(self) -> int:
        return 0 if self.answer_weights is None else self.answer_weights.shape[0]


def _draw_mixture(config: SynthConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    means = rng.normal(0.0, config.sigma_means, (config.n_mixture_components, config.dim))
    components = rng.integers(0, config.n_mixture_components, size=config.n_targets)
    return means, components


def gen_targets(config: SynthConfig) -> np.ndarray:
    """Stale targets g'(y): equal-weight Gaussian mixture, means ~ N(0, σ_means² I)."""
    rng = make_rng(derive_seed(config.seed, _TARGET_STREAM))
    means, components = _draw_mixture(config, rng)
    noise = rng.normal(0.0, 1.0, (config.n_targets, config.dim)) * config.sigma_comp
    return means[components] + noise


def mixture_means(config: SynthConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Component means and per-target component ids, replaying gen_targets' stream."""
    return _draw_mixture(config, make_rng(derive_seed(config.seed, _TARGET_STREAM)))


def isotropic_queries(n: int, dim: int, norm: float, rng: np.random.Generator) -> np.ndarray:
    return unit_directions(n, dim, rng, norm)


def staleness_kl(probes: np.ndarray, true_targets: np.ndarray, other_targets: np.ndarray,
                 beta: float) -> float:
    """Mean over probes of KL(P ‖ P_other) with full support."""
    kl = kl_from_logits(matmul_scores(probes, true_targets), matmul_scores(probes, other_targets), beta)
    return float(ordered_sum(kl) / kl.size)


def gen_drift(config: SynthConfig, stale_targets: np.ndarray, rng: np.random.Generator,
              probes: Optional[np.ndarray] = None) -> Tuple[MlpNet, np.ndarray, float]:
    """
    Random residual ReLU MLP mapping g' to g; init variance scales with drift_scale.

    Returns (drift net, g(y), realized staleness KL(P‖P_{g'}) over the probes).
    A drift_scale of 0 gives the identity map.
    """
    stale_targets = as_matrix("stale_targets", stale_targets, config.dim)
    drift = init_net(config.drift_spec, "he_normal", rng, scale=config.drift_scale)
    true_targets = drift(stale_targets)
    if probes is None:
        probes = isotropic_queries(config.n_probes, config.dim, config.query_norm, rng)
    kl = staleness_kl(probes, true_targets, stale_targets, config.beta)
    logger.info(f"Drift scale {config.drift_scale}: staleness KL {kl:.4f}")
    return drift, true_targets, kl


def gen_queries(true_targets: np.ndarray, m: int, label_noise: float,
                rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Queries near uniformly drawn labelled targets: x = g(y_label) + N(0, label_noise² I)."""
    if m < 1:
        raise ValueError(f"need at least one query, got {m}")
    true_targets = as_matrix("true_targets", true_targets)
    labels = rng.integers(0, true_targets.shape[0], size=m)
    noise = rng.normal(0.0, 1.0, (m, true_targets.shape[1])) * label_noise
    return true_targets[labels] + noise, labels.astype(np.int64)


def rescale_rows(rows: np.ndarray, norm: float) -> np.ndarray:
    """Every row moved onto the sphere of the given radius; zero rows stay zero."""
    rows = as_matrix("rows", rows)
    lengths = np.linalg.norm(rows, axis=1, keepdims=True)
    return np.where(lengths > 0.0, rows * (norm / np.where(lengths > 0.0, lengths, 1.0)), 0.0)


def gen_drift_task(config: SynthConfig, with_labels: bool = False) -> SynthTask:
    """
    Mixture targets, drift, training queries and probes in one call.

    Unlabelled tasks use isotropic queries of norm query_norm. Labelled tasks
    put stale and true targets on the sphere of radius target_norm, so the
    generating target of x = g(y) + noise is its nearest target by dot product;
    their true targets are the rescaled drift outputs.
    """
    stale = gen_targets(config)
    if with_labels:
        stale = rescale_rows(stale, config.target_norm)
    probe_rng = make_rng(derive_seed(config.seed, _PROBE_STREAM))
    probes = isotropic_queries(config.n_probes, config.dim, config.query_norm, probe_rng)
    drift, true, kl = gen_drift(config, stale, make_rng(derive_seed(config.seed, _DRIFT_STREAM)), probes)
    query_rng = make_rng(derive_seed(config.seed, _QUERY_STREAM))
    labels = probe_labels = None
    if with_labels:
        true = rescale_rows(true, config.target_norm)
        queries, labels = gen_queries(true, config.n_queries, config.label_noise, query_rng)
        probes, probe_labels = gen_queries(true, config.n_probes, config.label_noise, probe_rng)
        kl = staleness_kl(probes, true, stale, config.beta)
    else:
        queries = isotropic_queries(config.n_queries, config.dim, config.query_norm, query_rng)
    return SynthTask(queries=queries, stale_targets=stale, true_targets=true, probe_queries=probes,
                     beta=config.beta, labels=labels, probe_labels=probe_labels, drift_net=drift,
                     config=config, metadata={"staleness_kl": kl,
                                              "sigma_means": config.sigma_means,
                                              "sigma_comp": config.sigma_comp})


def gen_unit_circle_toy(n_targets: int, drift_angle_profile: Callable[[np.ndarray], np.ndarray],
                        rng: np.random.Generator, beta: float = 20.0, n_probes: int = 64) -> SynthTask:
    """
    Stale targets at random angles on the unit circle; true targets at
    profile(θ). Probes are unit vectors at uniform angles.
    """
    if n_targets < 2:
        raise ValueError(f"need at least two targets, got {n_targets}")
    theta = np.sort(rng.uniform(0.0, 2.0 * math.pi, n_targets))
    warped = np.asarray(drift_angle_profile(theta), dtype=np.float64)
    if warped.shape != theta.shape:
        raise ShapeError("angle profile must map each angle", warped.shape, theta.shape)
    stale = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    true = np.stack([np.cos(warped), np.sin(warped)], axis=1)
    probe_theta = np.linspace(0.0, 2.0 * math.pi, n_probes, endpoint=False)
    probes = np.stack([np.cos(probe_theta), np.sin(probe_theta)], axis=1)
    task = SynthTask(queries=probes.copy(), stale_targets=stale, true_targets=true,
                     probe_queries=probes, beta=beta)
    task.metadata["staleness_kl"] = staleness_kl(probes, true, stale, beta)
    task.metadata["angles"] = theta.tolist()
    return task


def rotation_profile(angle: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda theta: theta + angle


def sine_warp_profile(amplitude: float, frequency: int = 2) -> Callable[[np.ndarray], np.ndarray]:
    return lambda theta: theta + amplitude * np.sin(frequency * theta)


def answer_log_probs(answer_weights: np.ndarray, queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """log P*(a|x,y) = log_softmax_a ⟨w_a, concat(x, y)⟩, one row per (x, y) pair."""
    pairs = np.concatenate([queries, targets], axis=1)
    return log_softmax(matmul_scores(pairs, answer_weights))


def gen_rlm_answers(task: SynthTask, vocab_size: int, rng: np.random.Generator,
                    weight_scale: float = 1.0) -> SynthTask:
    """
    Draw answer weights w_a ~ N(0, weight_scale² I) in 2D dims and sample one answer
    per query from P*(a | x, y_label). Mutates and returns the task.
    """
    if vocab_size < 2:
        raise ConfigError("vocab_size", f"must be >= 2, got {vocab_size}")
    if task.labels is None or task.probe_labels is None:
        raise ValueError("answer generation needs a labelled task")
    weights = rng.normal(0.0, weight_scale, (vocab_size, 2 * task.dim))
    for queries, labels, attr in ((task.queries, task.labels, "answers"),
                                  (task.probe_queries, task.probe_labels, "probe_answers")):
        probs = np.exp(answer_log_probs(weights, queries, task.true_targets[labels]))
        setattr(task, attr, categorical_sample(probs, rng))
    task.answer_weights = weights
    return task


def save_task(task: SynthTask, out_dir: str) -> None:
    """Directory of CORRBUF1 matrices plus a JSON manifest of names, shapes and seed."""
    os.makedirs(out_dir, exist_ok=True)
    matrices = {"queries": task.queries, "stale_targets": task.stale_targets,
                "true_targets": task.true_targets, "probe_queries": task.probe_queries}
    if task.answer_weights is not None:
        matrices["answer_weights"] = task.answer_weights
    vectors = {name: getattr(task, name) for name in ("labels", "probe_labels", "answers", "probe_answers")
               if getattr(task, name) is not None}
    for name, mat in matrices.items():
        save_buffer_checkpoint(os.path.join(out_dir, f"{name}.bin"), mat, np.zeros(mat.shape[0]))
    manifest = {
        "beta": task.beta,
        "shapes": {name: list(mat.shape) for name, mat in matrices.items()},
        "vectors": {name: vec.astype(int).tolist() for name, vec in vectors.items()},
        "config": task.config.to_dict() if task.config else None,
        "seed": task.config.seed if task.config else None,
        "metadata": task.metadata,
    }
    if task.drift_net is not None:
        task.drift_net.save(os.path.join(out_dir, "drift.bin"))
    with open(os.path.join(out_dir, TASK_MANIFEST), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    logger.info(f"Saved task to {out_dir}")


def load_task(out_dir: str) -> SynthTask:
    with open(os.path.join(out_dir, TASK_MANIFEST), encoding="utf-8") as f:
        manifest = json.load(f)
    mats = {name: load_buffer_checkpoint(os.path.join(out_dir, f"{name}.bin"))[0]
            for name in manifest["shapes"]}
    vecs = {name: np.asarray(v, dtype=np.int64) for name, v in manifest["vectors"].items()}
    drift_path = os.path.join(out_dir, "drift.bin")
    return SynthTask(
        queries=mats["queries"], stale_targets=mats["stale_targets"], true_targets=mats["true_targets"],
        probe_queries=mats["probe_queries"], beta=manifest["beta"],
        labels=vecs.get("labels"), probe_labels=vecs.get("probe_labels"),
        answer_weights=mats.get("answer_weights"), answers=vecs.get("answers"),
        probe_answers=vecs.get("probe_answers"),
        drift_net=load_net(drift_path, residual=True) if os.path.exists(drift_path) else None,
        config=SynthConfig.from_dict(manifest["config"]) if manifest["config"] else None,
        metadata=manifest.get("metadata", {}),
    )
