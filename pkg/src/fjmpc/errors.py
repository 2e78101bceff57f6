"""Exception hierarchy shared across the package.

The CLI maps every subclass of :class:`FjmpcError` to a one-line error
message and a nonzero exit code.
"""


class FjmpcError(Exception):
    """Base class for all package errors."""

    kind = "error"


class NetworkError(FjmpcError):
    kind = "network"


class ConvergenceError(FjmpcError):
    kind = "convergence"

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class KernelError(FjmpcError):
    kind = "kernel"


class DesignViolation(FjmpcError):
    """Incentives push the effective input outside [0, 1] (headroom bound)."""

    kind = "design"

    def __init__(self, message, agents=(), margins=()):
        super().__init__(message)
        self.agents = tuple(agents)
        self.margins = tuple(margins)


class BudgetViolation(FjmpcError):
    kind = "budget"

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
        self.trajectory = None


class AssumptionError(FjmpcError):
    """A structural assumption needed by an analysis routine fails."""

    kind = "assumption"


class SolverError(FjmpcError):
    kind = "solver"


class ConfigError(FjmpcError):
    kind = "config"
