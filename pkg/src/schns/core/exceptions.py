"""Custom exception types for the schns simulator."""

from typing import Any, Dict, Optional


class SimulationError(Exception):
    """Base exception class for simulator errors."""
    pass


class ConfigurationError(SimulationError):
    """Exception raised for malformed or invalid run configuration."""

    def __init__(self, message: str, line: Optional[int] = None, key_path: Optional[str] = None):
        self.line = line
        self.key_path = key_path
        if line is not None:
            message = f"line {line}: {message}"
        if key_path is not None:
            message = f"{key_path}: {message}"
        super().__init__(message)


class GridShapeError(SimulationError):
    """Exception raised when a field does not live on the grid it is used with."""
    pass


class ParameterError(SimulationError):
    """Exception raised for numeric parameters outside their admissible range."""
    pass


class LinearSolveError(SimulationError):
    """Exception raised when an iterative or direct linear solve fails."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")


class StateError(SimulationError):
    """Exception raised for inconsistent or non-finite simulation state."""
    pass


class DivergenceError(SimulationError):
    """Exception raised when a path exceeds the blow-up guard."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class DataError(SimulationError):
    """Exception raised for unusable recorded data (NaN norms, missing terms, empty ensembles)."""
    pass


class CheckpointError(SimulationError):
    """Exception raised for unreadable or mismatched checkpoint files."""
    pass


class StorageError(SimulationError):
    """Exception raised when writing or reading output files fails."""
    pass


class VerificationError(SimulationError):
    """Exception raised when one or more verification suites fail."""

    def __init__(self, message: str, results: Optional[Dict[str, Any]] = None):
        self.results = results or {}
        super().__init__(message)
