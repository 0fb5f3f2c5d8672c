"""Exception hierarchy shared across the package."""


class ArchVerifyError(Exception):
    """Base class for all package errors."""


class ContractError(ArchVerifyError, ValueError):
    """An input violates an operation's preconditions."""


class ImageDecodeError(ArchVerifyError):
    """An image file could not be read or decoded."""

    def __init__(self, path, reason):
        super().__init__(f"cannot decode image {path!s}: {reason}")
        self.path = path


class NumericError(ArchVerifyError, ArithmeticError):
    """Non-finite values appeared in a computation."""


class TrainingDivergedError(NumericError):
    def __init__(self, phase, epoch, batch, detail=""):
        msg = f"non-finite loss in phase {phase}, epoch {epoch}, batch {batch}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.phase, self.epoch, self.batch = phase, epoch, batch


class CheckpointError(ArchVerifyError):
    """A checkpoint file is corrupt or unreadable."""


class CheckpointVersionError(CheckpointError):
    def __init__(self, found, supported):
        super().__init__(
            f"checkpoint format version {found} is not supported (this build reads version {supported})"
        )
        self.found, self.supported = found, supported


class ManifestError(ArchVerifyError):
    """Manifest parse or validation failure."""


class InsufficientDataError(ArchVerifyError):
    """Not enough images to satisfy a requested split or protocol."""


class UnknownArchitectureError(ArchVerifyError, LookupError):
    def __init__(self, label, known=()):
        msg = f"unknown architecture {label!r}"
        if known:
            msg += f"; known: {', '.join(sorted(known))}"
        super().__init__(msg)
        self.label = label


class UndefinedMetricError(ArchVerifyError, ValueError):
    """A metric was requested on a population where it is undefined."""


class ConfigError(ArchVerifyError):
    """Invalid or inconsistent configuration."""
