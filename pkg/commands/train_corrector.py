# commands/train_corrector.py
import os
from dataclasses import replace

from commands import SYNTH_FLAGS, obtain_task, output_root, require_seed, resolve_flags
from core.numkernel import derive_seed
from core.synth import SynthConfig, save_task
from core.trainer import IsolatedConfig, corrector_spec, train_corrector_isolated
from harness import finish_run, start_run

CORRECTOR_FLAGS = ("width", "depth", "sample_fraction")


def execute(config=None, seed=None, out=None, task=None, **flags):
    """Warm-up training of a corrector alone against a fixed drift task."""
    seed = require_seed(seed)
    (synth, isolated), extras = resolve_flags(config, flags, [SynthConfig, IsolatedConfig],
                                              extra=CORRECTOR_FLAGS)
    synth = replace(synth, seed=seed)
    isolated = replace(isolated, seed=derive_seed(seed, 1))
    width = int(extras.get("width", 4 * synth.dim))
    depth = int(extras.get("depth", 1))
    fraction = float(extras.get("sample_fraction", 1.0))

    ctx = start_run("train-corrector", {"synth": synth, "isolated": isolated, "width": width, "depth": depth,
                                        "sample_fraction": fraction, "task": task}, seed, output_root(out))
    drift_task = obtain_task(synth, task)
    spec = corrector_spec(drift_task.dim, width, depth)
    corrector, report = train_corrector_isolated(drift_task, spec, fraction, isolated)

    task_dir = task or os.path.join(ctx.directory, "task")
    if not task:
        save_task(drift_task, task_dir)
    corrector.save(os.path.join(ctx.directory, "corrector.bin"))
    evals = [{"step": r["epoch"], **r} for r in report.steps]
    row = {"width": width, "depth": depth, **report.summary}
    finish_run(ctx, [row], evals, extra={"task_dir": task_dir, "corrector_spec": spec.to_dict()})
    return {"run_dir": ctx.directory, **row}


COMMAND_METADATA = {
    "name": "train-corrector",
    "description": "Train a corrector h on g'(y) -> g(y) with the encoders fixed and report KL(P||P_h).",
    "parameters": {
        "type": "object",
        "properties": {
            **SYNTH_FLAGS,
            "width": {"type": "integer", "description": "Hidden width of the corrector (default 4D)"},
            "depth": {"type": "integer", "description": "Hidden layers of the corrector (default 1)"},
            "sample_fraction": {"type": "number", "description": "Fraction of targets in the training pool"},
            "learning_rate": {"type": "number", "description": "Adam learning rate"},
            "max_epochs": {"type": "integer", "description": "Epoch cap"},
            "patience": {"type": "integer", "description": "Epochs without improvement before stopping"},
            "batch_size": {"type": "integer", "description": "Queries per step"},
            "loss": {"type": "string", "enum": ["ce", "mse"], "description": "Corrector loss"},
            "subset_mode": {"type": "string", "enum": ["pool", "gumbel"],
                            "description": "Score the whole pool or Gumbel samples per query"},
            "samples_per_query": {"type": "integer", "description": "Gumbel samples per query"},
        },
        "required": ["seed"],
    },
}
