# commands/sweep_fraction.py
from commands import require_seed
from commands.sweep_capacity import SWEEP_FLAGS, build_sweep_spec, run_sweep_command
from harness import sweep_fraction

# low- and high-drift panels
FRACTION_DEFAULTS = {"drift_scales": (0.25, 1.0), "sample_fractions": (0.01, 0.1, 1.0)}


def execute(config=None, seed=None, out=None, **flags):
    """Corrector size against the fraction of targets seen, on a low- and a high-drift task."""
    seed = require_seed(seed)
    spec = build_sweep_spec(config, seed, out, flags, **FRACTION_DEFAULTS)
    return run_sweep_command("sweep-fraction", spec, sweep_fraction)


COMMAND_METADATA = {
    "name": "sweep-fraction",
    "description": "Isolated corrector runs over sample fractions {0.01,0.1,1.0} x widths x drift panels x seeds.",
    "parameters": {
        "type": "object",
        "properties": SWEEP_FLAGS,
        "required": ["seed"],
    },
}
