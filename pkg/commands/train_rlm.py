# commands/train_rlm.py
import os
from dataclasses import replace

from commands import SYNTH_FLAGS, obtain_task, output_root, require_seed, resolve_flags
from commands.train_joint import TRAIN_FLAGS
from core.errors import ConfigError
from core.synth import SynthConfig, save_task
from core.trainer import (RLM_ARMS, TrainConfig, default_corrector_spec, default_encoder_specs,
                          default_reader_spec, rlm_arm, train_rlm)
from harness import finish_run, start_run

DEFAULT_VOCAB = 16


def execute(config=None, seed=None, out=None, task=None, arm=None, vocab_size=None, **flags):
    """Retrieval-augmented training with a toy reader for one arm."""
    seed = require_seed(seed)
    (synth, train), extras = resolve_flags(config, flags, [SynthConfig, TrainConfig], extra=("vocab_size",))
    vocab = int(vocab_size or extras.get("vocab_size", DEFAULT_VOCAB))
    if vocab < 2:
        raise ConfigError("vocab_size", f"must be >= 2, got {vocab}")
    synth = replace(synth, seed=seed)
    train = rlm_arm(replace(train, seed=seed), arm or train.arm)

    ctx = start_run("train-rlm", {"synth": synth, "train": train, "vocab_size": vocab, "task": task},
                    seed, output_root(out))
    rlm_task = obtain_task(synth, task, with_labels=True, vocab_size=vocab)
    specs = default_encoder_specs(rlm_task.dim, train)
    reader_spec = default_reader_spec(rlm_task.dim, rlm_task.vocab_size, train)
    models, report = train_rlm(rlm_task, specs, reader_spec, default_corrector_spec(rlm_task.dim, train), train,
                               out_dir=ctx.directory)

    task_dir = task or os.path.join(ctx.directory, "task")
    if not task:
        save_task(rlm_task, task_dir)
    models.save(os.path.join(ctx.directory, "models"))
    finish_run(ctx, [report.summary], report.evals, extra={"task_dir": task_dir, "arm": train.arm})
    return {"run_dir": ctx.directory, **report.summary}


COMMAND_METADATA = {
    "name": "train-rlm",
    "description": "Train a retriever and toy reader with perplexity distillation over a stale buffer.",
    "parameters": {
        "type": "object",
        "properties": {
            **SYNTH_FLAGS,
            **TRAIN_FLAGS,
            "arm": {"type": "string", "enum": list(RLM_ARMS), "description": "Training arm (default corrector)"},
            "vocab_size": {"type": "integer", "description": f"Answer vocabulary (default {DEFAULT_VOCAB})"},
            "retrieve_k": {"type": "integer", "description": "Targets retrieved per query"},
            "reader_lr": {"type": "number", "description": "Reader learning rate"},
        },
        "required": ["seed"],
    },
}
