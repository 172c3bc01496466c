"""Exception types shared across the engine."""

from __future__ import annotations


class StrideError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(StrideError, ValueError):
    """A domain value violated one of its invariants."""


class ConfigError(StrideError):
    pass


# gateway
class ProviderUnavailable(StrideError):
    """The model provider could not produce a response."""


class ScriptParseError(StrideError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# retrieval
class DuplicateDocId(StrideError):
    pass


class EmptyCorpus(StrideError):
    pass


class EmptyText(StrideError, ValueError):
    pass


class IndexFormatError(StrideError):
    pass


# planning / execution
class PlanParseError(StrideError):
    pass


class PlanInvalid(StrideError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class UnresolvedDependency(StrideError):
    pass


class RewriteExhausted(StrideError):
    pass


class ReasonParseError(StrideError):
    pass


class ExtractParseError(StrideError):
    pass


class DuplicateOutcome(StrideError):
    pass


class InsufficientKG(StrideError):
    pass
