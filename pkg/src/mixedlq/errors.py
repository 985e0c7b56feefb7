"""Exception hierarchy.

Every error carries a short machine-readable ``code`` (the class name) so
the command line front end can map it to an exit status and print it
verbatim on standard error.
"""


class MixedLQError(Exception):
    """Base class for all errors raised by the package."""

    @property
    def code(self):
        return type(self).__name__

    def __str__(self):
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


class InputError(MixedLQError):
    """Problem data is malformed or violates a hypothesis."""


class DimensionMismatch(InputError):
    pass


class NotSymmetric(InputError):
    pass


class NotPSD(InputError):
    pass


class Inadmissible(InputError):
    pass


class OutOfRange(InputError):
    pass


class TimeInvariantRequired(InputError):
    pass


class NotPositiveDefinite(InputError):
    """A matrix required to be strictly positive (e.g. Q for the ARE) is not."""


class NumericError(MixedLQError):
    """A solver failed on admissible data."""

    def __init__(self, msg="", *, time=None, path=None):
        self.time = time
        self.path = path
        extra = []
        if path is not None:
            extra.append(f"path={path}")
        if time is not None:
            extra.append(f"t={time:.17g}")
        if extra:
            msg = f"{msg} ({', '.join(extra)})" if msg else ", ".join(extra)
        super().__init__(msg)


class SingularLambda(NumericError):
    pass


class SingularLambda2(NumericError):
    pass


class SingularLambdaHat(NumericError):
    pass


class BlowUp(NumericError):
    pass


class NotPositive(NumericError):
    pass


class RepresentationMismatch(NumericError):
    pass


class GridMismatch(NumericError):
    pass


class EmptyBundle(NumericError):
    pass


class NoConvergence(MixedLQError):
    pass
