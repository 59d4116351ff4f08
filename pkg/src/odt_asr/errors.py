"""Exception hierarchy shared by all modules."""


class OdtError(Exception):
    """Base class for every error raised by this package."""


class ProfileError(OdtError, ValueError):
    pass


class ParseError(OdtError, ValueError):
    pass


class NoFeasibleSubModel(OdtError):
    pass


class ClipTooShort(OdtError, ValueError):
    pass


class AudioFormatError(OdtError, ValueError):
    pass


class ShapeMismatch(OdtError, ValueError):
    pass


class NoForwardCache(OdtError, RuntimeError):
    pass


class NonFiniteGradient(OdtError, FloatingPointError):
    pass


class InfeasibleAlignment(OdtError, ValueError):
    pass


class EmptyAfterNormalise(OdtError, ValueError):
    pass


class EmptyReference(OdtError, ValueError):
    pass


class TranscriptTooLongForDuration(OdtError, ValueError):
    pass


class EmptyCache(OdtError, ValueError):
    pass


class CorruptCheckpoint(OdtError, ValueError):
    pass


class MissingPriorCheckpoint(OdtError, FileNotFoundError):
    pass
