# commands/__init__.py
"""Shared flag resolution for the CLI subcommands."""

from dataclasses import fields
from typing import Any, Dict, Iterable, List, Optional, Tuple

from core.errors import ConfigError
from core.numkernel import derive_seed, make_rng
from core.synth import ANSWER_STREAM, SynthConfig, SynthTask, gen_drift_task, gen_rlm_answers, load_task
from utils.config_utils import env_out_dir, load_config, resolve_config

# flags every command accepts; they never reach a config dataclass
RESERVED = ("config", "seed", "out")

SYNTH_FLAGS = {
    "n_targets": {"type": "integer", "description": "Number of targets N"},
    "dim": {"type": "integer", "description": "Embedding dimension D"},
    "n_mixture_components": {"type": "integer", "description": "Gaussian mixture components"},
    "drift_scale": {"type": "number", "description": "Scale of the random drift MLP weights"},
    "beta": {"type": "number", "description": "Inverse temperature"},
    "n_queries": {"type": "integer", "description": "Training queries"},
    "n_probes": {"type": "integer", "description": "Probe queries"},
    "label_noise": {"type": "number", "description": "Noise scale of labelled queries around their target"},
    "target_norm": {"type": "number", "description": "Radius of the targets in labelled tasks"},
    "task": {"type": "string", "description": "Load a saved task directory instead of generating one"},
}


def output_root(out: Optional[str]) -> str:
    return out or env_out_dir()


def require_seed(seed: Optional[int]) -> int:
    if seed is None:
        raise ConfigError("seed", "--seed is required")
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError("seed", f"must be a u64, got {seed}")
    return int(seed)


def resolve_flags(config_path: Optional[str], cli_values: Dict[str, Any], classes: Iterable[type],
                  extra: Iterable[str] = ()) -> Tuple[List[Any], Dict[str, Any]]:
    """
    Merge the config file and CLI flags, then hand each key to every config
    class that declares it. Keys in `extra` are returned separately; anything
    else is a ConfigError.
    """
    classes = list(classes)
    values = dict(load_config(config_path)) if config_path else {}
    values.update({k: v for k, v in cli_values.items() if v is not None and k not in RESERVED})
    known = [{f.name for f in fields(cls)} for cls in classes]
    extra = set(extra)
    parts: List[Dict[str, Any]] = [{} for _ in classes]
    extras: Dict[str, Any] = {}
    for key, value in values.items():
        owners = [i for i, names in enumerate(known) if key in names]
        if key in extra:
            extras[key] = value
        elif not owners:
            raise ConfigError(key, "unknown config key")
        for i in owners:
            parts[i][key] = value
    return [resolve_config(cls, part) for cls, part in zip(classes, parts)], extras


def obtain_task(synth: SynthConfig, task_dir: Optional[str], with_labels: bool = False,
                vocab_size: int = 0) -> SynthTask:
    """Load a saved task or generate one; answers are drawn when vocab_size > 0 and missing."""
    task = load_task(task_dir) if task_dir else gen_drift_task(synth, with_labels=with_labels)
    if with_labels and task.labels is None:
        raise ConfigError("task", f"{task_dir} has no labels")
    if vocab_size and task.answers is None:
        gen_rlm_answers(task, vocab_size, make_rng(derive_seed(synth.seed, ANSWER_STREAM)))
    return task
