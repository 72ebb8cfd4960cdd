"""Exception hierarchy.

The CLI maps these onto exit codes: :class:`ConfigError` → 2,
:class:`InfeasibleError` → 3, every other :class:`SlabdecompError` → 4.
"""


class SlabdecompError(Exception):
    """Base class for library errors."""


class ConfigError(SlabdecompError, ValueError):
    """Invalid parameters or configuration."""


class PreconditionError(SlabdecompError, ValueError):
    """An operation's mathematical precondition does not hold."""


class InfeasibleError(SlabdecompError):
    """The decomposition is not log-concave for any tested shift."""


class QuadratureError(SlabdecompError, ArithmeticError):
    """Adaptive quadrature did not reach its tolerance."""


class ChainError(SlabdecompError, ArithmeticError):
    """A Markov chain hit a non-finite energy or gradient."""

    def __init__(self, message, state_index=None):
        super().__init__(message)
        self.state_index = state_index


class ModeFindingError(SlabdecompError, ArithmeticError):
    """Gradient descent for the field mode diverged."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class NonConvergenceError(SlabdecompError, ArithmeticError):
    """An iterative search hit its iteration cap."""
