"""Exception types shared across the toolkit."""


class MaskLabError(Exception):
    """Base class for every error raised by this package."""


class InputError(MaskLabError, ValueError):
    """An argument violates an operation's contract."""


class CapabilityError(MaskLabError):
    """A forward-only scorer was asked for input gradients."""


class BaselineError(MaskLabError):
    """No blur level drove the class confidence below the requested bound."""

    def __init__(self, message, final_sigma=None, final_confidence=None):
        super().__init__(message)
        self.final_sigma = final_sigma
        self.final_confidence = final_confidence


class TrainingError(MaskLabError):
    """An optimisation run produced a non-finite loss."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class CapacityError(MaskLabError):
    """An exhaustive enumeration would exceed its hard size cap."""
