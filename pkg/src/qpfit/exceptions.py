"""Exception hierarchy for qpfit.

Outcomes that are legitimate results (an infeasible state, a QP that hit its
iteration cap) are reported through status fields. These exceptions are for
contract violations and failed pipeline steps.
"""


class QPFitError(Exception):
    """Base class for all qpfit errors."""


class DimensionError(QPFitError, ValueError):
    """Matrix or vector dimensions are inconsistent."""


class NotPositiveDefiniteError(QPFitError, ValueError):
    """A matrix required to be symmetric positive definite is not."""


class InfeasibleProblemError(QPFitError):
    """An LP or polyhedron has an empty feasible set."""


class UnboundedProblemError(QPFitError):
    """An LP is unbounded in the optimization direction."""


class SolverError(QPFitError):
    """A solver stopped at its iteration cap or met a singular KKT system."""


class ConvergenceError(QPFitError):
    """A fixed-point iteration (Riccati, invariant set) did not converge."""


class ConstructionError(QPFitError):
    """The exact network construction is not available for a problem."""


class RegionNotFoundError(QPFitError):
    """Point location found no critical region containing the state."""


class SamplingError(QPFitError):
    """Dataset sampling cannot reach the requested number of feasible samples."""


class TrainingError(QPFitError):
    """Every training restart diverged."""


class AcceptanceError(QPFitError):
    """An evaluation acceptance check failed."""


class OperatingPointError(QPFitError):
    """The requested operating point is not an equilibrium of the discrete model."""
