"""Exception hierarchy for the solvers.

Every error carries the name of the module that raised it so the CLI can map
it to an exit code and report where a run broke.
"""


class EpiMFGError(Exception):
    module = "epimfg"


class ParamsError(EpiMFGError, ValueError):
    module = "model"


class NegativeRate(ParamsError):
    pass


class ZeroDiscount(ParamsError):
    pass


class PmfNotNormalized(ParamsError):
    pass


class NonpositivePhiI(ParamsError):
    pass


class UnknownAttribute(ParamsError):
    pass


class InvalidState(ParamsError):
    pass


class DegenerateRemoval(ParamsError):
    pass


class MeanFieldBoundsError(EpiMFGError, ValueError):
    module = "model"


class SolverError(EpiMFGError, RuntimeError):
    module = "solver"


class StepUnstable(SolverError):
    module = "ode"


class CflViolation(SolverError):
    module = "pde"


class MassDriftExceeded(SolverError):
    module = "fpk"


class NotConverged(SolverError):
    module = "solver"

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class GridMismatch(SolverError):
    module = "mfe"


class HypothesisViolated(SolverError):
    module = "stationary"


class DomainError(SolverError, ValueError):
    module = "stationary"


class StepTooCoarse(SolverError):
    module = "mc"


class EmptySample(SolverError):
    module = "mc"


class ConfigError(EpiMFGError):
    module = "cli"
