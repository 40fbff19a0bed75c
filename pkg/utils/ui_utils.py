# utils/ui_utils.py

import sys
from contextlib import contextmanager
from typing import Optional

from halo import Halo

from utils.config_utils import spinner_disabled

_active_spinner: Optional[Halo] = None


def spinner_enabled() -> bool:
    return sys.stdout.isatty() and not spinner_disabled()


@contextmanager
def spinner(text: str):
    """Console spinner for long-running work; a no-op off a terminal."""
    global _active_spinner
    if not spinner_enabled():
        yield None
        return
    _active_spinner = Halo(text=text, spinner="dots")
    _active_spinner.start()
    try:
        yield _active_spinner
        _active_spinner.succeed(text)
    except Exception:
        _active_spinner.fail(text)
        raise
    finally:
        _active_spinner.stop()
        _active_spinner = None


def update_spinner_status(status: str):
    """Update the spinner status message, if a spinner is running"""
    if _active_spinner is not None:
        _active_spinner.text = status
