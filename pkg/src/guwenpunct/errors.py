"""Exception types shared across the toolkit."""


class GuwenError(Exception):
    """Base class for all toolkit errors."""


# corpus / dataset errors

class MalformedSource(GuwenError):
    """Source file is not JSON or has no recognized body key."""


class EmptyCorpus(GuwenError):
    """An operation that needs records received none."""


class EmptyDataset(GuwenError):
    """Training requested on an empty dataset."""


class IndexOutOfRange(GuwenError):
    """Punctuation metadata points past the end of the text."""


class LengthMismatch(GuwenError):
    """Two aligned sequences have different lengths."""


# numeric core errors

class ShapeMismatch(GuwenError):
    """Operand shapes are incompatible."""


class NotScalar(GuwenError):
    """backward() requires a scalar loss."""


class BadTarget(GuwenError):
    """A class target is outside [0, C)."""


class EmptyLoss(GuwenError):
    """Every position was ignored; the loss is undefined."""


# model errors

class EmptySequence(GuwenError):
    """A sequence operation received zero timesteps."""


class BadTokenId(GuwenError):
    """A token id is outside the embedding table."""


class WindowTooSmall(GuwenError):
    """Attention window radius is negative or masks out a full row."""


# training / evaluation errors

class DivergedLoss(GuwenError):
    """Training loss became NaN or infinite."""


class TaskMismatch(GuwenError):
    """Reports from different tasks cannot be compared."""


class VocabMismatch(GuwenError):
    """Vocabulary does not match the checkpoint sidecar hash."""


class BadCheckpoint(GuwenError):
    """Checkpoint file is corrupt or has an unknown format."""


class ConfigError(GuwenError):
    """Configuration file contains unknown or invalid entries."""
