"""Exception types shared across the package."""


class AwtlabError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(AwtlabError):
    """An array does not have the shape the consumer requires."""


class LabelError(AwtlabError):
    """A class label is outside the valid range."""


class NonFiniteError(AwtlabError):
    """A NaN or Inf appeared; the message names the producing stage."""


class FormatError(AwtlabError):
    """A binary file is not a valid container of the expected kind."""


class CorruptCheckpointError(FormatError):
    """Checkpoint content hash does not match its payload."""


class ConfigError(AwtlabError):
    """An experiment or attack configuration violates the schema."""


class TrainingDivergedError(AwtlabError):
    """Training loss became non-finite; the message names epoch and batch."""


class AttackError(AwtlabError):
    """An attack step failed; the message carries method and iteration."""
