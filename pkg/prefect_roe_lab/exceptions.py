"""Exceptions raised by the laboratory"""

from typing import Optional


class RoeLabError(Exception):
    """
    Base class for every error raised by `prefect_roe_lab`.
    """


class DomainError(RoeLabError, ValueError):
    """
    Raised when an input violates the domain of an operation, e.g. an unknown
    point, mismatched spaces or a failed precondition.
    """


class ConvergenceError(RoeLabError, RuntimeError):
    """
    Raised when an iterative method exhausts its iteration budget.

    Attributes:
        lower: The best certified lower bound reached.
        upper: The best certified upper bound reached.
    """

    def __init__(self, message: str, lower: float, upper: float):
        super().__init__(f"{message} (bracket [{lower!r}, {upper!r}])")
        self.lower = lower
        self.upper = upper


class InvariantViolation(RoeLabError, RuntimeError):
    """
    Raised when an internal guarantee that should hold by construction fails.
    """


class NotInHullError(RoeLabError):
    """
    Raised when a target vector lies outside the convex hull of the range of a
    vector measure.

    Attributes:
        result: The `NotInHull` result carrying the separating functional.
    """

    def __init__(self, result):
        super().__init__(
            f"Target is not in the convex hull of the range; separation gap "
            f"{result.gap!r}."
        )
        self.result = result


class UncertifiedHypothesis(RoeLabError):
    """
    Raised when a hypothesis of a quantitative check cannot be certified.

    Attributes:
        certificate: Name of the failing certificate.
        value: The measured value.
        bound: The bound the value had to meet.
    """

    def __init__(self, certificate: str, value: float, bound: Optional[float]):
        super().__init__(
            f"Hypothesis {certificate!r} is not certified: measured {value!r}, "
            f"required bound {bound!r}."
        )
        self.certificate = certificate
        self.value = value
        self.bound = bound


class ConclusionViolation(RoeLabError):
    """
    Raised when a certified instance fails the conclusion it should satisfy.

    Attributes:
        quantity: Name of the measured quantity.
        measured: The measured value.
        bound: The bound it violates.
    """

    def __init__(self, quantity: str, measured: float, bound: float):
        super().__init__(
            f"Conclusion violated for {quantity!r}: measured {measured!r} "
            f"against bound {bound!r}."
        )
        self.quantity = quantity
        self.measured = measured
        self.bound = bound
