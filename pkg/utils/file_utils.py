# utils/file_utils.py

import os
import re
from datetime import datetime, timezone

_UNSAFE = re.compile(r"[^A-Za-z0-9._-]+")


def sanitize_filename(filename):
    """
    Ensure a filename is a single safe path component.

    Args:
        filename (str): The filename or path to sanitize

    Returns:
        str: Basename with unsafe characters replaced by '_'
    """
    safe_name = _UNSAFE.sub("_", os.path.basename(str(filename))).strip("._")
    return safe_name or "unnamed"


def is_safe_path(filepath, base_dir):
    """
    Check if the file path is safe (within base directory).

    Args:
        filepath (str): Path to check
        base_dir (str): Base directory that should contain filepath

    Returns:
        bool: True if path is safe, False otherwise
    """
    try:
        file_path = os.path.abspath(filepath)
        base_path = os.path.abspath(base_dir)
        return os.path.commonpath([file_path, base_path]) == base_path
    except Exception:
        return False


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def utc_now():
    return datetime.now(timezone.utc).isoformat()


def run_dir(out_root, command, run_id):
    """<out_root>/<command>-<run_id>, created on demand."""
    path = os.path.join(out_root, f"{sanitize_filename(command)}-{sanitize_filename(run_id)}")
    if not is_safe_path(path, out_root):
        raise ValueError(f"run directory escapes {out_root}: {path}")
    return ensure_dir(path)
