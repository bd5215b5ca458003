"""Exception types shared across the package."""


class CrowdFitError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CrowdFitError):
    """Invalid template data, dimension mismatch, or bad configuration."""


class DomainError(CrowdFitError, ValueError):
    """Input outside the mathematical domain of an operation."""


class ProjectionError(DomainError):
    """A point with non-positive depth cannot be projected."""

    def __init__(self, message, person=None, joint=None):
        super().__init__(message)
        self.person = person
        self.joint = joint


class DegeneratePersonError(DomainError):
    """A person whose geometry makes an operation ill-defined."""

    def __init__(self, message, person=None):
        super().__init__(message)
        self.person = person


class EvaluationError(CrowdFitError):
    """Non-finite value encountered while evaluating an objective."""


class NonFiniteGradientError(EvaluationError):
    """An optimizer step was refused because the gradient is not finite."""


class SceneFormatError(CrowdFitError):
    """A scene or result file failed schema validation."""
