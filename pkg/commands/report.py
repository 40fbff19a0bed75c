# commands/report.py
import os

from termcolor import cprint

from commands import output_root
from harness import LEDGER, report
from utils.db_utils import RunsDB
from utils.file_utils import ensure_dir, run_dir
from utils.record_utils import save_json, write_csv_rows


def runs_from_ledger(out_root: str, command=None):
    """Run directories of completed runs recorded in the ledger under out_root."""
    db = RunsDB(os.path.join(out_root, LEDGER))
    try:
        runs = db.get_all_runs()
    finally:
        db.close()
    return [run_dir(out_root, r["command"], r["id"]) for r in runs
            if r["status"] == "completed" and (command is None or r["command"] == command)
            and r["command"] != "report"]


def execute(config=None, seed=None, out=None, runs=None, kind=None, dest=None):
    """Aggregate run directories by config digest: medians and IQRs across seeds."""
    out_root = output_root(out)
    directories = list(runs) if runs else runs_from_ledger(out_root, kind)
    aggregated, plot_data = report(directories)
    target = ensure_dir(dest or os.path.join(out_root, "report"))
    csv_path = os.path.join(target, "aggregated.csv")
    json_path = os.path.join(target, "plot_data.json")
    write_csv_rows(csv_path, aggregated.to_dict(orient="records"), list(aggregated.columns))
    save_json(json_path, {"runs": [os.path.abspath(d) for d in directories], "rows": plot_data})
    cprint(f"Aggregated {len(directories)} runs into {len(aggregated)} rows: {csv_path}", "green")
    return {"csv": csv_path, "json": json_path, "n_runs": len(directories), "n_rows": len(aggregated)}


COMMAND_METADATA = {
    "name": "report",
    "description": "Join run results on config digest and write aggregated CSV plus plot-ready JSON.",
    "parameters": {
        "type": "object",
        "properties": {
            "runs": {"type": "array", "items": {"type": "string"},
                     "description": "Run directories (default: completed runs in the ledger)"},
            "kind": {"type": "string", "description": "Only ledger runs of this command, e.g. sweep-capacity"},
            "dest": {"type": "string", "description": "Output directory (default <out>/report)"},
        },
        "required": [],
    },
}
