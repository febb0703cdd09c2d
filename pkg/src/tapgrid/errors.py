"""Exception types raised across the package."""


class TapgridError(Exception):
    """Base class for all package errors."""


class GenerationError(TapgridError):
    """A task or candidate set could not be generated."""


class UsageError(TapgridError):
    """An operation was called on an object in the wrong state."""


class NoUniqueValueError(TapgridError):
    """The Bellman linear system has no unique solution."""


class ConvergenceError(TapgridError):
    """An iterative solver ran out of iterations."""


class SupportMismatchError(TapgridError):
    pass


class QueryRangeError(TapgridError):
    pass


class NoFutureError(TapgridError):
    """Future relabeling requested at the last step of a trajectory."""


class EmptyReplayError(TapgridError):
    pass


class PreconditionError(TapgridError):
    pass
