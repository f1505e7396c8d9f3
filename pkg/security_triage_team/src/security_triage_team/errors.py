"""
errors.py - Exception hierarchy for the security triage pipeline.

Every failure the pipeline can signal derives from `TriageError`, so callers
can catch one base class at the outer boundary (the CLI) and still branch on
the specific business rule that was violated.
"""

from typing import Any, List, Optional


class TriageError(Exception):
    """Base exception for all triage pipeline errors."""
    pass


class ConfigError(TriageError):
    """Raised when a run configuration is inconsistent or incomplete."""
    pass


class StartupError(TriageError):
    """Raised before any analysis when a repository or report is unreadable."""
    pass


class IngestError(TriageError):
    """Raised when a scanner report cannot be normalized."""

    def __init__(self, message: str, entry_index: Optional[int] = None):
        super().__init__(message)
        self.entry_index = entry_index


class AssessmentParseError(TriageError):
    """Raised when canonical assessment text has unknown, missing or bad keys."""

    def __init__(self, message: str, key: str):
        super().__init__(message)
        self.key = key


class NavigationError(TriageError):
    """Raised when a path is absent from the snapshot or escapes the repo root."""
    pass


class BinaryContentError(TriageError):
    """Raised when a text operation is requested on a binary file."""
    pass


class PatternError(TriageError):
    """Raised when a search or rule pattern does not compile."""
    pass


class BudgetExceededError(TriageError):
    """Raised when an agent run ends without a final answer."""

    def __init__(self, message: str, trace: Any = None):
        super().__init__(message)
        self.trace = trace


class ProtocolError(TriageError):
    """Raised when a model backend keeps violating the action protocol."""
    pass


class ProtocolViolation(TriageError):
    """Raised by a backend for a single malformed action; the loop reprompts once."""
    pass


class TransportError(TriageError):
    """Raised when the remote completion service stays unreachable."""
    pass


class PairingError(TriageError):
    """Raised when gold and predicted labels cover different findings."""

    def __init__(self, message: str, unmatched: List[str]):
        super().__init__(message)
        self.unmatched = unmatched


class EmptyInputError(TriageError):
    """Raised when an aggregate is requested over nothing."""
    pass
