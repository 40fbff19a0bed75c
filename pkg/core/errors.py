# core/errors.py

class CorrectorError(Exception):
    """Base class for every error raised by the corrector toolkit."""


class ShapeError(CorrectorError, ValueError):
    """Raised when array shapes do not line up."""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(s)) for s in shapes)})"
        super().__init__(message)


class SupportError(CorrectorError, ValueError):
    """q assigns zero mass where p does not."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"support violation at index {index}: q is 0 but p is positive")


class NonFiniteError(CorrectorError, ValueError):
    """A tensor contains NaN or Inf."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite values in '{name}'")


class ConfigError(CorrectorError, ValueError):
    """Invalid configuration value; carries the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"invalid config '{key}': {message}")


class StaleCacheError(CorrectorError, RuntimeError):
    """Backward was called with activations that no longer match the net."""


class DivergenceError(CorrectorError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss_name: str = "loss"):
        self.step = step
        super().__init__(f"{loss_name} became non-finite at step {step}")


class DigestCollisionError(CorrectorError, RuntimeError):
    """Two runs share a config digest but disagree on their configs."""
