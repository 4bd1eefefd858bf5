"""Exception types shared across the solver stack."""


class AmecError(Exception):
    """Base class for all library errors."""


class ConfigError(AmecError):
    """Bad configuration file or out-of-range parameter."""


class InfeasibleError(AmecError):
    """A (sub)problem has an empty feasible set.

    `detail` carries the quantity that proves infeasibility (e.g. the
    capacity threshold that F_max falls short of).
    """

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class EnergyCausalityError(InfeasibleError):
    """Harvested energy cannot cover the transmit energy of the first slot."""


class NonConvergenceError(AmecError):
    """Iteration limit hit before the requested accuracy was reached.

    `best` carries the best iterate found so far for diagnostics.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class AllSchedulesInfeasibleError(AmecError):
    """Every permutation violates some accumulated feasibility cut."""
