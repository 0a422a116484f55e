"""Exception types shared across the package."""


class ClipSimError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(ClipSimError, ValueError):
    """A numeric parameter is outside its admissible range."""


class ConfigurationError(ClipSimError, ValueError):
    """A run/sweep configuration is inconsistent or incomplete."""


class StateError(ClipSimError, ValueError):
    """Optimizer state does not match the problem (e.g. dimension mismatch)."""


class DatasetParseError(ClipSimError, ValueError):
    """A dataset file could not be parsed; carries the offending line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class UnsupportedDatasetError(ClipSimError, ValueError):
    """The dataset content is outside what the loss supports (e.g. >2 classes)."""


class DivergenceError(ClipSimError, RuntimeError):
    """An iterate became non-finite; carries the 1-based step index."""

    def __init__(self, step, what="state"):
        super().__init__(f"non-finite {what} encountered at step {step}")
        self.step = step


class DiagnosticUnavailableError(ClipSimError, ValueError):
    """A diagnostic needs metadata (e.g. the optimal value) that is absent."""
