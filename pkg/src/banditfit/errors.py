"""Exception hierarchy shared by all modules."""


class BanditFitError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(BanditFitError, ValueError):
    """Inputs with the wrong shape, non-finite entries or out-of-box values."""


class InvalidEpisodeError(InvalidInputError):
    """An episode that is inconsistent with its bandit specification."""


class DegenerateRowError(BanditFitError):
    """A log-space row fit whose recovered learning rate is zero."""


class RecoveryError(BanditFitError):
    """A local row fit failed; ``best`` holds the best iterate seen, if any."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
