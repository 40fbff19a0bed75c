# commands/eval.py
import os

from commands import output_root
from core.buffer import load_buffer
from core.errors import ConfigError
from core.net import load_net
from core.numkernel import kl_from_logits, matmul_scores, ordered_sum
from core.synth import load_task
from core.trainer import DEFAULT_RECALL_KS, TrainConfig, TrainedModels, answer_accuracy, evaluate_recall
from harness import MANIFEST, finish_run, start_run
from utils.record_utils import load_json

EVALUABLE = ("train-corrector", "train-joint", "train-rlm")


def _mean_kl(probes, reference, other, beta) -> float:
    kl = kl_from_logits(matmul_scores(probes, reference), matmul_scores(probes, other), beta)
    return float(ordered_sum(kl) / kl.size)


def _load_models(models_dir: str) -> TrainedModels:
    def net(name, residual):
        path = os.path.join(models_dir, f"{name}.bin")
        return load_net(path, residual=residual) if os.path.exists(path) else None

    buffer_path = os.path.join(models_dir, "buffer.bin")
    return TrainedModels(net("query_encoder", True), net("target_encoder", True), net("corrector", True),
                         net("reader", False), load_buffer(buffer_path) if os.path.exists(buffer_path) else None)


def evaluate_run(directory: str, ks=DEFAULT_RECALL_KS) -> dict:
    """Recompute probe metrics from a training run's saved models and task."""
    manifest = load_json(os.path.join(directory, MANIFEST))
    command = manifest["command"]
    if command not in EVALUABLE:
        raise ConfigError("run", f"cannot evaluate a {command} run")
    task = load_task(manifest["task_dir"])
    metrics = {"source_run": manifest["run_id"], "command": command}

    if command == "train-corrector":
        corrector = load_net(os.path.join(directory, "corrector.bin"), residual=True)
        metrics["final_kl"] = _mean_kl(task.probe_queries, task.true_targets, corrector(task.stale_targets),
                                       task.beta)
        metrics["staleness_kl"] = _mean_kl(task.probe_queries, task.true_targets, task.stale_targets, task.beta)
        return metrics

    models = _load_models(os.path.join(directory, "models"))
    config = TrainConfig(**manifest["config"]["train"])
    metrics["arm"] = config.arm
    if command == "train-rlm":
        metrics["accuracy"] = answer_accuracy(models, task, config)
        if config.arm == "no_retrieval":
            return metrics
    metrics.update(evaluate_recall((models.query_encoder, models.target_encoder), task, ks))
    fx = models.query_encoder(task.probe_queries)
    fresh = models.target_encoder(task.true_targets)
    stale = models.buffer.rows()
    metrics["kl_p_ph"] = _mean_kl(fx, fresh, models.corrector(stale), task.beta)
    metrics["kl_p_pstale"] = _mean_kl(fx, fresh, stale, task.beta)
    return metrics


def execute(config=None, seed=None, out=None, run=None, ks=None):
    """Evaluate the saved models of a training run on its probe queries."""
    ks = tuple(ks) if ks else DEFAULT_RECALL_KS
    metrics = evaluate_run(run, ks)
    ctx = start_run("eval", {"run": os.path.abspath(run), "ks": ks}, seed or 0, output_root(out))
    finish_run(ctx, [metrics])
    return {"run_dir": ctx.directory, **metrics}


COMMAND_METADATA = {
    "name": "eval",
    "description": "Recompute probe recall, KL and accuracy from a train-* run directory.",
    "parameters": {
        "type": "object",
        "properties": {
            "run": {"type": "string", "description": "Run directory of a train-corrector/joint/rlm run"},
            "ks": {"type": "array", "items": {"type": "integer"}, "description": "Recall cut-offs"},
        },
        "required": ["run"],
    },
}
