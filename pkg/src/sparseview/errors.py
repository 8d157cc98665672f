"""Exception hierarchy.

Every error carries a stable ``code`` (the class name) so the CLI can emit
a machine-readable diagnostic line.
"""


class SparseViewError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, message="", **context):
        super().__init__(message)
        self.message = message
        self.context = context

    @property
    def code(self):
        return type(self).__name__


class NonPositiveDepth(SparseViewError):
    pass


class ViewMismatch(SparseViewError):
    pass


class InsufficientViews(SparseViewError):
    pass


class EmptyMatchGraph(SparseViewError):
    pass


class DegenerateFit(SparseViewError):
    pass


class InsufficientSamples(SparseViewError):
    pass


class PoseMismatch(SparseViewError):
    pass


class DegenerateRange(SparseViewError):
    pass


class DimensionMismatch(SparseViewError):
    pass


class ZeroVariance(SparseViewError):
    pass


class NoOverlap(SparseViewError):
    pass


class ParseError(SparseViewError):
    pass


class MissingInput(SparseViewError):
    pass


class ConfigOutOfRange(SparseViewError):
    pass
