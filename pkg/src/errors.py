"""
Exception hierarchy for the attribution pipeline.

Every error raised on purpose by the package derives from AttributionPipelineError so the
CLI can map it to an exit code.
"""

from typing import List, Optional


class AttributionPipelineError(Exception):
    """Base class for all pipeline errors."""


class RejectedInputError(AttributionPipelineError, ValueError):
    """An operation received input that violates its preconditions."""


class InternalConsistencyError(AttributionPipelineError):
    """Two internal structures that must agree do not (e.g. token/word alignment)."""


class NumericalError(AttributionPipelineError):
    """A numerical routine could not produce a trustworthy result."""

    def __init__(self, message: str, condition_estimate: Optional[float] = None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class TrainingError(AttributionPipelineError):
    """Language-model training diverged."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ConfigError(AttributionPipelineError):
    """Configuration validation failed; lists every violated constraint."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("Invalid configuration:\n  - " + "\n  - ".join(self.violations))


class DependencyError(AttributionPipelineError):
    """An upstream artifact is missing."""

    def __init__(self, artifact: str, producer: str):
        self.artifact = artifact
        self.producer = producer
        super().__init__(
            f"Missing upstream artifact {artifact}; run `brain-attrib {producer}` first"
        )
