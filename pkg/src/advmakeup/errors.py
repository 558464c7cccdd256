"""Exception types raised across the package.

Every exception carries a ``code`` string naming the failure (for example
``EMPTY_DATASET`` or ``INCOMPATIBLE_VICTIM``) so callers and the CLI can branch
on it without parsing messages.
"""


class AdvMakeupError(Exception):
    """Base class. ``code`` identifies the failure kind."""

    def __init__(self, code, message=""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class DatasetError(AdvMakeupError):
    pass


class FaceCropError(AdvMakeupError):
    pass


class ModelError(AdvMakeupError):
    pass


class CheckpointError(AdvMakeupError):
    pass


class LossInputError(AdvMakeupError):
    pass


class TrainingError(AdvMakeupError):
    pass


class EvaluationError(AdvMakeupError):
    pass


class ConfigError(AdvMakeupError):
    pass
