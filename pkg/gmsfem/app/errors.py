"""Exception hierarchy for the GMsFEM solver."""

from typing import Optional


class GMsFEMError(Exception):
    """Base class for all solver errors."""


class InvalidArgumentError(GMsFEMError, ValueError):
    """Bad counts, indices, shapes or matrix properties."""


class StateError(GMsFEMError, RuntimeError):
    """Operation called before its prerequisite was computed."""


class SolverFailure(GMsFEMError, RuntimeError):
    """A linear solve did not reach its tolerance or broke down."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class RankDeficientError(SolverFailure):
    """The coarse Gram matrix lost definiteness at a given pivot."""

    def __init__(self, message: str, pivot_index: int):
        super().__init__(f"{message} at pivot {pivot_index}")
        self.pivot_index = pivot_index


class FieldError(GMsFEMError, ValueError):
    """Permeability field could not be loaded or is invalid."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{message}: {path}" if path else message)
        self.path = path


class ConfigError(GMsFEMError, ValueError):
    """Run configuration is invalid; names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class OutputError(GMsFEMError, OSError):
    """An artifact could not be written."""

    def __init__(self, message: str, path: str):
        super().__init__(f"{message}: {path}")
        self.path = path
