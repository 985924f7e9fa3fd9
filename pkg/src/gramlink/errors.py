"""Exception hierarchy.

``UserInputError`` subclasses signal bad input (CLI exit code 2); everything
else deriving from ``GramlinkError`` is treated as an internal failure.
"""


class GramlinkError(Exception):
    pass


class UserInputError(GramlinkError):
    pass


class EmptySurfaceName(UserInputError, ValueError):
    pass


class ShapeMismatch(GramlinkError, ValueError):
    pass


class MaskShapeMismatch(ShapeMismatch):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class InvalidRate(GramlinkError, ValueError):
    pass


class IndexOutOfRange(GramlinkError, IndexError):
    pass


class GraphTooLarge(GramlinkError, ValueError):
    pass


class EmptyInput(GramlinkError, ValueError):
    pass


class UnknownEntity(UserInputError, KeyError):
    pass


class UnknownRelation(UserInputError, KeyError):
    pass


class UnknownCandidate(UserInputError, KeyError):
    pass


class DatasetError(UserInputError):
    pass


class MissingFile(DatasetError, FileNotFoundError):
    pass


class MalformedLine(DatasetError, ValueError):
    pass


class SplitOverlap(DatasetError, ValueError):
    pass


class DanglingId(DatasetError, KeyError):
    pass


class VocabMismatch(UserInputError, ValueError):
    pass


class ConfigError(UserInputError, ValueError):
    pass
