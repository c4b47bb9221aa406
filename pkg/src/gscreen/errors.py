"""Exception hierarchy shared by every gscreen module."""


class GScreenError(Exception):
    """Base class for all errors raised by gscreen."""


class ExprError(GScreenError):
    pass


class ExprSyntaxError(ExprError):
    """Malformed expression source. ``offset`` is the byte offset of the first error."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownVariable(ExprError):
    def __init__(self, name, offset=None):
        where = "" if offset is None else f" (at offset {offset})"
        super().__init__(f"unknown variable {name!r}{where}")
        self.name = name
        self.offset = offset


class ArityError(ExprError):
    pass


class DomainError(GScreenError):
    """A point lies outside the domain of a partial function (log, sqrt, ^)."""


class NonFinite(GScreenError):
    """Evaluation overflowed or produced NaN."""


class ModelError(GScreenError):
    """Inconsistent problem statement."""


class OutOfRange(GScreenError):
    pass


class NoConvergence(GScreenError):
    def __init__(self, message, *, t=None, iterate=None):
        super().__init__(message)
        self.t = t
        self.iterate = iterate


class LeftDomain(GScreenError):
    def __init__(self, message, *, t=None, iterate=None):
        super().__init__(message)
        self.t = t
        self.iterate = iterate


class GridTooSmall(GScreenError):
    pass


class RankDeficient(GScreenError):
    pass


class FamilyMismatch(GScreenError):
    pass


class SingularDenominator(GScreenError):
    pass


class Infeasible(GScreenError):
    pass


class TooLarge(GScreenError):
    pass
