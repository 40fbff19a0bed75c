# commands/synth_gen.py
import os
from dataclasses import replace

from termcolor import cprint

from commands import SYNTH_FLAGS, obtain_task, output_root, require_seed, resolve_flags
from core.synth import SynthConfig, save_task
from harness import finish_run, start_run


def execute(config=None, seed=None, out=None, with_labels=None, vocab_size=None, **flags):
    """Generate a synthetic drift task and save it under the run directory."""
    seed = require_seed(seed)
    (synth,), _ = resolve_flags(config, flags, [SynthConfig])
    synth = replace(synth, seed=seed)
    vocab_size = vocab_size or 0
    ctx = start_run("synth-gen", {"synth": synth, "with_labels": bool(with_labels or vocab_size),
                                  "vocab_size": vocab_size}, seed, output_root(out))
    task = obtain_task(synth, None, with_labels=bool(with_labels or vocab_size), vocab_size=vocab_size)
    task_dir = os.path.join(ctx.directory, "task")
    save_task(task, task_dir)
    row = {"n_targets": task.n_targets, "dim": task.dim, "drift_scale": synth.drift_scale,
           "staleness_kl": task.metadata["staleness_kl"], "vocab_size": task.vocab_size}
    finish_run(ctx, [row], extra={"task_dir": task_dir})
    cprint(f"KL(P||P_g') = {row['staleness_kl']:.5f}", "green")
    return {"run_dir": ctx.directory, "task_dir": task_dir, **row}


COMMAND_METADATA = {
    "name": "synth-gen",
    "description": "Generate a mixture-of-Gaussians target set with a random drift map and save it.",
    "parameters": {
        "type": "object",
        "properties": {
            **{k: v for k, v in SYNTH_FLAGS.items() if k != "task"},
            "with_labels": {"type": "boolean", "description": "Draw labelled queries near true targets"},
            "vocab_size": {"type": "integer", "description": "Also draw toy reader answers over this vocabulary"},
        },
        "required": ["seed"],
    },
}
