"""Exception types shared across the package."""


class DictFitError(Exception):
    """Base class for all package errors."""


class InvalidParams(DictFitError, ValueError):
    pass


class OutOfDomain(DictFitError, ValueError):
    pass


class DimensionMismatch(DictFitError, ValueError):
    pass


class Unsupported(DictFitError, ValueError):
    pass


class SingularSystem(DictFitError, RuntimeError):
    pass


class DegenerateAtom(DictFitError, ZeroDivisionError):
    """Raised when a signal model has zero norm and no scale can be defined."""


class EmptyDictionary(DictFitError, ValueError):
    pass


class LayoutOverlap(DictFitError, ValueError):
    pass


class FileFormatError(DictFitError, IOError):
    """Base class for binary container errors."""


class BadMagic(FileFormatError):
    pass


class VersionMismatch(FileFormatError):
    pass


class TruncatedFile(FileFormatError):
    pass


class ChecksumMismatch(FileFormatError):
    pass


class RankDeficientWarning(UserWarning):
    pass
