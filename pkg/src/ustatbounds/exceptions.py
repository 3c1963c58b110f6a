"""Exception hierarchy shared by every module."""


class UStatBoundsError(Exception):
    """Base class for all errors raised by the package."""


class ValidationError(UStatBoundsError, ValueError):
    """Malformed input: bad shapes, non-finite values, bad probabilities."""


class InvalidPartitionError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class DomainError(ValidationError):
    """An argument lies outside the domain where the operation is defined."""


class UnsupportedMethodError(UStatBoundsError):
    pass


class BudgetExceededError(UStatBoundsError):
    """Exact enumeration would visit more states than the configured budget.

    Exact-mode callers should switch to Monte Carlo estimation.
    """

    def __init__(self, states, budget, context=""):
        self.states = states
        self.budget = budget
        self.context = context
        msg = f"exact enumeration needs {states} states, budget is {budget}"
        if context:
            msg += f" ({context})"
        msg += "; use montecarlo mode instead"
        super().__init__(msg)


class CanonicalityError(UStatBoundsError):
    """A kernel that must be canonical is not.

    ``axis`` and ``index`` are 1-based and locate the largest conditional
    mean; ``value`` is that mean.
    """

    def __init__(self, axis, index, value):
        self.axis = axis
        self.index = index
        self.value = value
        super().__init__(
            f"kernel is not canonical: conditional mean over axis {axis} "
            f"at index {index} is {value:.3e}"
        )
