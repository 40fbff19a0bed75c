# harness.py
"""
Run bookkeeping, sweep orchestration and result aggregation.

Every run gets a directory <out>/<command>-<run_id>/ holding manifest.json,
results.csv, and steps.jsonl where the command produces step records. Runs
are also recorded in the DuckDB ledger at <out>/runs.duckdb.
"""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from termcolor import cprint

from core import __version__
from core.errors import DigestCollisionError
from core.net import MlpSpec, init_net
from core.numkernel import derive_seed, make_rng, matmul_scores, top_k, unit_directions
from core.synth import SynthConfig, SynthTask, gen_drift_task, gen_targets
from core.trainer import IsolatedConfig, corrector_spec, train_corrector_isolated
from utils.config_utils import canonical_json, config_digest, to_plain
from utils.db_utils import RunsDB, new_run_id
from utils.file_utils import run_dir, utc_now
from utils.record_utils import append_jsonl, load_json, read_csv_rows, save_json, write_csv_rows
from utils.ui_utils import spinner, update_spinner_status

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
RESULTS = "results.csv"
STEPS = "steps.jsonl"
LEDGER = "runs.duckdb"

MODELLING_CHOICES = {
    "corrector_mse": "squared L2, averaged over subset rows",
    "risk_gap_bounded_losses": "mse: 1 - exp(-||g - h(g')||^2); ce-pointwise: 1 - P_h(y|x)",
    "mixture": "equal weights, means ~ N(0, sigma_means^2 I), component covariance sigma_comp^2 I",
    "exhaustive_refresh": "before the step at every multiple of refresh_every",
}

SWEEP_COLUMNS = ["cell_index", "digest", "width", "depth", "drift_scale", "sample_fraction", "seed_index",
                 "task_seed", "train_seed", "param_count", "staleness_kl", "final_kl", "epochs", "status",
                 "error", "config_json"]

# columns that identify a cell rather than measure it
KEY_COLUMNS = ("digest", "config_json", "width", "depth", "drift_scale", "sample_fraction", "param_count",
               "arm", "command", "k")
REPLICATE_COLUMNS = ("cell_index", "seed_index", "task_seed", "train_seed", "seed", "epochs", "status", "error")


@dataclass
class RunContext:
    command: str
    run_id: str
    directory: str
    config: dict
    seed: int
    digest: str
    started: str
    out_root: str


def start_run(command: str, config: Any, seed: int, out_root: str) -> RunContext:
    run_id = new_run_id()
    plain = to_plain(config)
    ctx = RunContext(command, run_id, run_dir(out_root, command, run_id), plain, int(seed),
                     config_digest(plain), utc_now(), out_root)
    cprint(f"Starting {command} run {run_id} (digest {ctx.digest[:12]})", "cyan")
    logger.info(f"Run {run_id}: {command} seed={seed} dir={ctx.directory}")
    return ctx


def finish_run(ctx: RunContext, rows: Sequence[dict], evals: Sequence[dict] = (), status: str = "completed",
               columns: Optional[Sequence[str]] = None, extra: Optional[dict] = None) -> dict:
    """Write manifest, results and step log, then record the run in the ledger."""
    manifest = {
        "run_id": ctx.run_id,
        "command": ctx.command,
        "config": ctx.config,
        "digest": ctx.digest,
        "seed": ctx.seed,
        "version": __version__,
        "start_timestamp": ctx.started,
        "end_timestamp": utc_now(),
        "status": status,
        "modelling_choices": MODELLING_CHOICES,
        **(extra or {}),
    }
    save_json(os.path.join(ctx.directory, MANIFEST), manifest)
    if rows:
        write_csv_rows(os.path.join(ctx.directory, RESULTS), rows, columns)
    if evals:
        append_jsonl(os.path.join(ctx.directory, STEPS), evals)
    try:
        db = RunsDB(os.path.join(ctx.out_root, LEDGER))
        db.create_run(ctx.command, ctx.digest, ctx.seed, run_id=ctx.run_id)
        for record in evals:
            db.add_step(ctx.run_id, int(record.get("step", 0)), record)
        db.finish_run(ctx.run_id, status)
        db.close()
    except Exception as e:
        # the run directory is the source of truth; the ledger is an index
        logger.warning(f"Could not record run {ctx.run_id} in the ledger: {e}")
    colour = "green" if status == "completed" else "red"
    cprint(f"{ctx.command} run {ctx.run_id} {status}: {ctx.directory}", colour)
    return manifest


# --- sweeps -------------------------------------------------------------------

@dataclass
class SweepSpec:
    synth: SynthConfig = field(default_factory=SynthConfig)
    isolated: IsolatedConfig = field(default_factory=IsolatedConfig)
    width_multipliers: Tuple[int, ...] = (1, 2, 4, 8)
    depths: Tuple[int, ...] = (0, 1, 2)
    drift_scales: Tuple[float, ...] = (0.1, 0.5, 1.0)
    sample_fractions: Tuple[float, ...] = (1.0,)
    n_seeds: int = 10
    seed: int = 0
    workers: int = 1
    out_dir: str = "runs"

    def corrector_shapes(self) -> List[Tuple[int, int]]:
        """(width, depth) pairs; depth 0 has no hidden width so it appears once."""
        shapes = []
        for depth in self.depths:
            if depth == 0:
                shapes.append((0, 0))
            else:
                shapes.extend((m * self.synth.dim, depth) for m in self.width_multipliers)
        return shapes

    def cells(self) -> List[dict]:
        cells = []
        for drift in self.drift_scales:
            for fraction in self.sample_fractions:
                for width, depth in self.corrector_shapes():
                    for seed_index in range(self.n_seeds):
                        index = len(cells)
                        cells.append({
                            "cell_index": index, "width": width, "depth": depth, "drift_scale": drift,
                            "sample_fraction": fraction, "seed_index": seed_index,
                            "task_seed": derive_seed(self.seed, seed_index),
                            "train_seed": derive_seed(self.seed, 1_000_000 + index),
                        })
        return cells


def _cell_config(cell: dict, spec: SweepSpec) -> dict:
    return {"width": cell["width"], "depth": cell["depth"], "drift_scale": cell["drift_scale"],
            "sample_fraction": cell["sample_fraction"],
            "synth": replace(spec.synth, drift_scale=cell["drift_scale"]),
            "isolated": spec.isolated}


def run_cell(cell: dict, spec: SweepSpec) -> dict:
    """One isolated-corrector run; failures become status=failed rows."""
    settings = _cell_config(cell, spec)
    row = {**cell, "digest": config_digest(settings), "status": "ok", "error": "",
           "config_json": canonical_json(_strip_seeds(settings))}
    try:
        synth = replace(spec.synth, drift_scale=cell["drift_scale"], seed=cell["task_seed"])
        task = gen_drift_task(synth)
        corr = corrector_spec(synth.dim, cell["width"], cell["depth"])
        _, report = train_corrector_isolated(task, corr, cell["sample_fraction"],
                                             replace(spec.isolated, seed=cell["train_seed"]))
        row.update({k: report.summary[k] for k in ("param_count", "staleness_kl", "final_kl", "epochs")})
    except Exception as e:
        logger.error(f"Sweep cell {cell['cell_index']} failed: {e}")
        row.update({"status": "failed", "error": str(e), "param_count": None, "staleness_kl": None,
                    "final_kl": None, "epochs": None})
    return row


def _strip_seeds(value):
    plain = to_plain(value)
    if isinstance(plain, dict):
        return {k: _strip_seeds(v) for k, v in plain.items() if k != "seed"}
    return plain


def run_sweep(spec: SweepSpec, label: str) -> pd.DataFrame:
    """Run every cell, in parallel when workers > 1; rows come back in cell order."""
    cells = spec.cells()
    digests = {config_digest(_cell_config(c, spec)) for c in cells}
    if len(digests) != len(cells) // max(spec.n_seeds, 1):
        raise DigestCollisionError(f"{label}: sweep axes produce duplicate cells")
    rows: List[Optional[dict]] = [None] * len(cells)
    with spinner(f"{label}: 0/{len(cells)} cells"):
        if spec.workers <= 1:
            for i, cell in enumerate(cells):
                rows[i] = run_cell(cell, spec)
                update_spinner_status(f"{label}: {i + 1}/{len(cells)} cells")
        else:
            with ProcessPoolExecutor(max_workers=spec.workers) as pool:
                futures = {pool.submit(run_cell, cell, spec): cell["cell_index"] for cell in cells}
                for done, future in enumerate(as_completed(futures), start=1):
                    rows[futures[future]] = future.result()
                    update_spinner_status(f"{label}: {done}/{len(cells)} cells")
    failed = sum(1 for r in rows if r["status"] != "ok")
    if failed:
        cprint(f"{label}: {failed} of {len(cells)} cells failed", "yellow")
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def sweep_capacity(spec: SweepSpec) -> pd.DataFrame:
    """Corrector size against staleness: one isolated run per (width, depth, drift, seed)."""
    return run_sweep(spec, "sweep-capacity")


def sweep_fraction(spec: SweepSpec) -> pd.DataFrame:
    """Corrector size against the fraction of targets seen in training, per drift level."""
    if not spec.sample_fractions or len(spec.sample_fractions) < 2:
        logger.warning("sweep-fraction with a single fraction; use e.g. 0.01 0.1 1.0")
    return run_sweep(spec, "sweep-fraction")


# --- small encoder approximating a large one ------------------------------------

def neighbor_precision(queries: np.ndarray, reference: np.ndarray, candidate: np.ndarray,
                       ks: Sequence[int]) -> Dict[int, float]:
    """Mean |top-k(candidate) ∩ top-k(reference)| / k over the queries."""
    ref_scores = matmul_scores(queries, reference)
    cand_scores = matmul_scores(queries, candidate)
    out = {}
    for k in ks:
        k_eff = min(k, reference.shape[0])
        overlaps = [np.intersect1d(top_k(ref_scores[i], k_eff), top_k(cand_scores[i], k_eff)).size / k_eff
                    for i in range(queries.shape[0])]
        out[k] = float(np.mean(overlaps))
    return out


@dataclass
class SmallLargeConfig:
    n_targets: int = 4096
    raw_dim: int = 16
    dim: int = 8
    n_mixture_components: int = 20
    small_hidden: Tuple[int, ...] = (8,)
    large_hidden: Tuple[int, ...] = (64, 64)
    related_scale: float = 0.25
    n_queries: int = 512
    n_eval_queries: int = 256
    samples_per_query: int = 32
    corrector_width: int = 64
    corrector_depth: int = 2
    beta: float = 20.0
    ks: Tuple[int, ...] = (10, 20, 100)
    seed: int = 0


def gen_small_large_task(config: SmallLargeConfig) -> SynthTask:
    """
    Two random encoders over shared raw targets. The large encoder's output is a
    random residual map of the small one's plus an independent term of
    weight related_scale, so the two spaces are related but not identical.
    """
    raw = gen_targets(SynthConfig(n_targets=config.n_targets, dim=config.raw_dim,
                                  n_mixture_components=config.n_mixture_components,
                                  seed=derive_seed(config.seed, 0)))
    rng = make_rng(derive_seed(config.seed, 1))
    small = init_net(MlpSpec(config.raw_dim, config.small_hidden, config.dim), "he_normal", rng)
    link = init_net(MlpSpec(config.dim, (config.dim,), config.dim, residual=True), "he_normal", rng, scale=0.5)
    independent = init_net(MlpSpec(config.raw_dim, config.large_hidden, config.dim), "he_normal", rng)
    small_emb = small(raw)
    large_emb = link(small_emb) + config.related_scale * independent(raw)
    queries = unit_directions(config.n_queries, config.dim, rng)
    eval_queries = unit_directions(config.n_eval_queries, config.dim, rng)
    # scale queries so beta-logits stay moderate at embedding norms
    scale = 1.0 / max(float(np.sqrt(np.mean(np.sum(large_emb * large_emb, axis=1)))), 1e-12)
    return SynthTask(queries=queries * scale, stale_targets=small_emb, true_targets=large_emb,
                     probe_queries=eval_queries * scale, beta=config.beta)


def small_approximates_large(config: SmallLargeConfig,
                             isolated: Optional[IsolatedConfig] = None) -> List[dict]:
    """Neighbour precision of corrected-small and raw-small embeddings against the large encoder."""
    task = gen_small_large_task(config)
    isolated = replace(isolated or IsolatedConfig(), subset_mode="gumbel",
                       samples_per_query=config.samples_per_query, seed=derive_seed(config.seed, 2))
    spec = corrector_spec(config.dim, config.corrector_width, config.corrector_depth)
    corrector, report = train_corrector_isolated(task, spec, 1.0, isolated)
    corrected = corrector(task.stale_targets)
    before = neighbor_precision(task.probe_queries, task.true_targets, task.stale_targets, config.ks)
    after = neighbor_precision(task.probe_queries, task.true_targets, corrected, config.ks)
    return [{"k": k, "uncorrected": before[k], "corrected": after[k], "seed": config.seed,
             "final_kl": report.summary["final_kl"], "staleness_kl": report.summary["staleness_kl"]}
            for k in config.ks]


# --- aggregation ----------------------------------------------------------------

def _load_run_rows(directory: str) -> pd.DataFrame:
    manifest = load_json(os.path.join(directory, MANIFEST))
    results = os.path.join(directory, RESULTS)
    frame = read_csv_rows(results) if os.path.exists(results) else pd.DataFrame([{}])
    if "digest" not in frame.columns:
        frame["digest"] = manifest["digest"]
    if "config_json" not in frame.columns:
        frame["config_json"] = canonical_json(_strip_seeds(manifest["config"]))
    frame["command"] = manifest["command"]
    if "seed" not in frame.columns and "seed_index" not in frame.columns:
        frame["seed"] = manifest["seed"]
    return frame


def report(run_dirs: Sequence[str]) -> Tuple[pd.DataFrame, List[dict]]:
    """
    Join rows from run directories on config digest and summarise each metric
    by median and interquartile range across seeds. Never recomputes metrics.
    """
    if not run_dirs:
        raise ValueError("report needs at least one run directory")
    frame = pd.concat([_load_run_rows(d) for d in run_dirs], ignore_index=True)
    if "status" in frame.columns:
        frame = frame[frame["status"].fillna("ok") == "ok"]
    conflicts = frame.groupby("digest")["config_json"].nunique()
    if (conflicts > 1).any():
        raise DigestCollisionError(f"digest {conflicts[conflicts > 1].index[0]} maps to different configs")

    group_keys = [c for c in KEY_COLUMNS if c in frame.columns]
    metrics = [c for c in frame.columns
               if c not in group_keys and c not in REPLICATE_COLUMNS and pd.api.types.is_numeric_dtype(frame[c])]
    rows = []
    for keys, group in frame.groupby(group_keys, dropna=False, sort=True):
        row = dict(zip(group_keys, keys if isinstance(keys, tuple) else (keys,)))
        row["n_seeds"] = len(group)
        for metric in metrics:
            values = group[metric].dropna().to_numpy(dtype=np.float64)
            if values.size == 0:
                continue
            row[f"{metric}_median"] = float(np.median(values))
            row[f"{metric}_q25"] = float(np.percentile(values, 25))
            row[f"{metric}_q75"] = float(np.percentile(values, 75))
        rows.append(row)
    aggregated = pd.DataFrame(rows)
    plot_data = [{k: v for k, v in r.items() if k != "config_json"} for r in rows]
    return aggregated, plot_data


def median_of(frame: pd.DataFrame, column: str, **where) -> float:
    """Median of a column over rows matching the given equalities (NaN if none)."""
    mask = np.ones(len(frame), dtype=bool)
    for key, value in where.items():
        mask &= np.isclose(frame[key].to_numpy(dtype=np.float64), value)
    values = frame.loc[mask, column].dropna()
    return float(values.median()) if len(values) else math.nan
