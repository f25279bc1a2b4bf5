"""Exception types shared across the package."""


class BanditError(Exception):
    """Base class for all batchbandit errors."""


class InvalidInputError(BanditError):
    """An argument is non-finite or outside its documented domain."""


class InvalidConfigError(BanditError):
    """An experiment or campaign configuration is inconsistent."""


class UninformedPosteriorError(BanditError):
    """An operation needs data but the posterior is still improper (tau == 0)."""


class InsufficientDataError(BanditError):
    """Fewer samples than the operation requires (e.g. variance needs >= 2)."""


class ReplayCoverageError(BanditError):
    """A replay log has no rewards for a (batch, arm) cell that was requested."""
