"""Exception hierarchy.

The CLI maps these onto exit codes: :class:`ConfigError` -> 2,
:class:`ArtifactError` -> 3, :class:`DomainError` -> 4.
"""


class CCMPruneError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(CCMPruneError, ValueError):
    pass


class DomainError(CCMPruneError, ValueError):
    pass


class DegenerateInputError(DomainError):
    pass


class StructuralError(DomainError):
    pass


class InvalidAlphaError(DomainError):
    pass


class TrainingDivergedError(CCMPruneError, RuntimeError):
    pass


class ArtifactError(CCMPruneError, OSError):
    """A stage artifact is missing, unreadable or corrupt."""


class TensorFormatError(ArtifactError):
    pass


class BadMagicError(TensorFormatError):
    pass


class VersionMismatchError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class LengthMismatchError(TensorFormatError):
    pass
