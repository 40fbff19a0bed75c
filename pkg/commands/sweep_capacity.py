# commands/sweep_capacity.py
from dataclasses import replace

from commands import SYNTH_FLAGS, output_root, require_seed, resolve_flags
from core.numkernel import median
from core.synth import SynthConfig
from core.trainer import IsolatedConfig
from harness import SWEEP_COLUMNS, SweepSpec, finish_run, start_run, sweep_capacity
from utils.config_utils import env_workers

AXIS_KEYS = ("width_multipliers", "depths", "drift_scales", "sample_fractions", "n_seeds", "workers")

SWEEP_FLAGS = {
    **{k: v for k, v in SYNTH_FLAGS.items() if k not in ("task", "drift_scale")},
    "width_multipliers": {"type": "array", "items": {"type": "integer"}, "description": "Widths as multiples of D"},
    "depths": {"type": "array", "items": {"type": "integer"}, "description": "Corrector hidden-layer counts"},
    "drift_scales": {"type": "array", "items": {"type": "number"}, "description": "Drift levels"},
    "sample_fractions": {"type": "array", "items": {"type": "number"}, "description": "Training pool fractions"},
    "n_seeds": {"type": "integer", "description": "Seeds per cell"},
    "workers": {"type": "integer", "description": "Parallel cells (default $CORRECTOR_WORKERS or 1)"},
    "learning_rate": {"type": "number", "description": "Adam learning rate"},
    "max_epochs": {"type": "integer", "description": "Epoch cap"},
    "patience": {"type": "integer", "description": "Epochs without improvement before stopping"},
    "loss": {"type": "string", "enum": ["ce", "mse"], "description": "Corrector loss"},
}


def build_sweep_spec(config, seed, out, flags, **axis_defaults) -> SweepSpec:
    """SweepSpec from defaults, then the config file, then CLI flags."""
    (synth, isolated), extras = resolve_flags(config, flags, [SynthConfig, IsolatedConfig], extra=AXIS_KEYS)
    axes = {**axis_defaults, **extras}
    for key in ("width_multipliers", "depths", "drift_scales", "sample_fractions"):
        if key in axes:
            axes[key] = tuple(axes[key])
    axes.setdefault("workers", env_workers())
    return SweepSpec(synth=replace(synth, seed=seed), isolated=isolated, seed=seed,
                     out_dir=output_root(out), **axes)


def run_sweep_command(command: str, spec: SweepSpec, sweep) -> dict:
    ctx = start_run(command, spec, spec.seed, spec.out_dir)
    frame = sweep(spec)
    rows = frame.to_dict(orient="records")
    status = "completed" if (frame["status"] == "ok").any() else "failed"
    finish_run(ctx, rows, status=status, columns=SWEEP_COLUMNS, extra={"n_cells": len(rows)})
    ok = frame[frame["status"] == "ok"]
    return {"run_dir": ctx.directory, "n_cells": len(rows), "n_failed": int((frame["status"] != "ok").sum()),
            "median_final_kl": median(ok["final_kl"].tolist()) if len(ok) else None}


def execute(config=None, seed=None, out=None, **flags):
    """Corrector size against staleness: width x depth x drift x seeds."""
    seed = require_seed(seed)
    spec = build_sweep_spec(config, seed, out, flags)
    return run_sweep_command("sweep-capacity", spec, sweep_capacity)


COMMAND_METADATA = {
    "name": "sweep-capacity",
    "description": "Isolated corrector runs over widths {1,2,4,8}D x depths {0,1,2} x drift levels x seeds.",
    "parameters": {
        "type": "object",
        "properties": SWEEP_FLAGS,
        "required": ["seed"],
    },
}
