# commands/small_large.py
from dataclasses import replace

from termcolor import cprint

from commands import output_root, require_seed, resolve_flags
from harness import SmallLargeConfig, finish_run, small_approximates_large, start_run


def execute(config=None, seed=None, out=None, **flags):
    """Warp a small random encoder's space toward a large one and report top-k overlap."""
    seed = require_seed(seed)
    (settings,), _ = resolve_flags(config, flags, [SmallLargeConfig])
    settings = replace(settings, seed=seed)
    ctx = start_run("small-large", settings, seed, output_root(out))
    rows = small_approximates_large(settings)
    finish_run(ctx, rows)
    for row in rows:
        cprint(f"P@{row['k']}: {row['uncorrected']:.4f} -> {row['corrected']:.4f}", "green")
    return {"run_dir": ctx.directory, "rows": rows}


COMMAND_METADATA = {
    "name": "small-large",
    "description": "Train a corrector mapping small-encoder embeddings toward a large encoder; report neighbour precision.",
    "parameters": {
        "type": "object",
        "properties": {
            "n_targets": {"type": "integer", "description": "Number of targets"},
            "dim": {"type": "integer", "description": "Shared output dimension"},
            "related_scale": {"type": "number", "description": "Weight of the large encoder's independent term"},
            "samples_per_query": {"type": "integer", "description": "Gumbel samples per query (default 32)"},
            "corrector_width": {"type": "integer", "description": "Corrector hidden width"},
            "corrector_depth": {"type": "integer", "description": "Corrector hidden layers"},
            "ks": {"type": "array", "items": {"type": "integer"}, "description": "Precision cut-offs"},
        },
        "required": ["seed"],
    },
}
