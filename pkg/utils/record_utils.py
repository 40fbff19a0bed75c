# utils/record_utils.py

import csv
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import pandas as pd

from utils.config_utils import to_plain


def append_jsonl(path: str, records: Iterable[Dict[str, Any]]) -> int:
    """Append records as JSON lines; returns how many were written."""
    dir_path = os.path.dirname(path)
    if dir_path:
        os.makedirs(dir_path, exist_ok=True)
    count = 0
    with open(path, 'a', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(to_plain(record), sort_keys=True) + "\n")
            count += 1
    return count


def load_jsonl(path: str) -> List[Dict[str, Any]]:
    """
    Load JSON-lines records.

    Returns an empty list when the file does not exist.
    """
    if not os.path.exists(path):
        return []
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def write_csv_rows(path: str, rows: Sequence[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """UTF-8 CSV with a header row and RFC-4180 quoting."""
    frame = pd.DataFrame([to_plain(r) for r in rows], columns=list(columns) if columns else None)
    dir_path = os.path.dirname(path)
    if dir_path:
        os.makedirs(dir_path, exist_ok=True)
    frame.to_csv(path, index=False, encoding='utf-8', quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
    logging.info(f"Wrote {len(frame)} rows to {path}")
    return frame


def read_csv_rows(path: str) -> pd.DataFrame:
    return pd.read_csv(path, encoding='utf-8')


def save_json(path: str, data: Any) -> None:
    dir_path = os.path.dirname(path)
    if dir_path:
        os.makedirs(dir_path, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(to_plain(data), f, indent=2, sort_keys=True)


def load_json(path: str) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
