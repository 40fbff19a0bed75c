# commands/train_joint.py
import os
from dataclasses import replace

from commands import SYNTH_FLAGS, obtain_task, output_root, require_seed, resolve_flags
from core.synth import SynthConfig, save_task
from core.trainer import JOINT_ARMS, TrainConfig, default_corrector_spec, default_encoder_specs, joint_arm, train_joint
from harness import finish_run, start_run

TRAIN_FLAGS = {
    "arm": {"type": "string", "enum": list(JOINT_ARMS), "description": "Training arm (default corrector)"},
    "steps": {"type": "integer", "description": "Optimisation steps"},
    "batch_size": {"type": "integer", "description": "Queries per step"},
    "k_hard": {"type": "integer", "description": "Hard candidates per query"},
    "k_uniform": {"type": "integer", "description": "Uniform negatives per batch (0 disables)"},
    "subset_mode": {"type": "string", "enum": ["topk", "gumbel"], "description": "Hard candidate selection"},
    "corrector_loss": {"type": "string", "enum": ["ce", "mse"], "description": "Corrector loss"},
    "corrector_loss_weight": {"type": "number", "description": "Weight on the corrector loss"},
    "refresh_every": {"type": "integer", "description": "Re-embed the buffer every R steps (0 never)"},
    "encoder_init": {"type": "string", "enum": ["zero_residual", "he_normal"],
                     "description": "Encoder init (zero_residual starts at the identity)"},
    "encoder_init_scale": {"type": "number", "description": "Variance scale of the encoder init"},
    "encoder_lr": {"type": "number", "description": "Encoder learning rate"},
    "corrector_lr": {"type": "number", "description": "Corrector learning rate"},
    "eval_every": {"type": "integer", "description": "Steps between evaluations"},
    "checkpoint_every": {"type": "integer", "description": "Steps between checkpoints (0 never)"},
}


def execute(config=None, seed=None, out=None, task=None, arm=None, **flags):
    """Joint dual-encoder and corrector training for one arm."""
    seed = require_seed(seed)
    (synth, train), _ = resolve_flags(config, flags, [SynthConfig, TrainConfig])
    synth = replace(synth, seed=seed)
    train = joint_arm(replace(train, seed=seed), arm or train.arm)

    ctx = start_run("train-joint", {"synth": synth, "train": train, "task": task}, seed, output_root(out))
    labelled = obtain_task(synth, task, with_labels=True)
    encoder_specs = default_encoder_specs(labelled.dim, train)
    corr_spec = default_corrector_spec(labelled.dim, train)
    models, report = train_joint(labelled, encoder_specs, corr_spec, train, out_dir=ctx.directory)

    task_dir = task or os.path.join(ctx.directory, "task")
    if not task:
        save_task(labelled, task_dir)
    models.save(os.path.join(ctx.directory, "models"))
    finish_run(ctx, [report.summary], report.evals, extra={"task_dir": task_dir, "arm": train.arm})
    return {"run_dir": ctx.directory, **report.summary}


COMMAND_METADATA = {
    "name": "train-joint",
    "description": "Train query/target encoders with hard negatives from a corrected stale buffer.",
    "parameters": {
        "type": "object",
        "properties": {**SYNTH_FLAGS, **TRAIN_FLAGS},
        "required": ["seed"],
    },
}
