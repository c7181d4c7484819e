"""Exception types shared across the package."""


class PatchyFlowError(Exception):
    """Base class for all package errors."""


class OutsideDomain(PatchyFlowError):
    """A point (or an integrated path) left the union of all patch domains.

    Carries the partial trajectory when raised by a solver, so callers can
    inspect what was computed before the exit.
    """

    def __init__(self, message, trajectory=None, point=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.point = point


class StallDetected(PatchyFlowError):
    """The forward solver stopped making progress at a geometric ambiguity."""


class NoBackwardSolution(PatchyFlowError):
    """The backward flow exits every admissible region; no solution exists."""


class JumpExitsDomain(PatchyFlowError):
    """An impulsive displacement moved the state outside every patch."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class HorizonExceeded(PatchyFlowError):
    """An exit-time search ran past its time cap without leaving the region."""


class MixedSignEdge(PatchyFlowError):
    """A region boundary edge has both inflow and outflow; the field is
    tangent somewhere on it, so the scenario is not generic."""


class InvalidBoundaryPoint(PatchyFlowError):
    """A point expected on a polygon boundary is not on it."""


class BudgetExceeded(PatchyFlowError):
    """A pipeline stage violated its jump/variation budget bound."""

    def __init__(self, message, stage=None, measured=None, bound=None):
        super().__init__(message)
        self.stage = stage
        self.measured = measured
        self.bound = bound


class TubeAmbiguity(PatchyFlowError):
    """A path segment meets more than one invariant flow tube; the tube
    width is too large for the segment's jump budget."""


class TubeContradiction(PatchyFlowError):
    """A segment with boundary-anchored jumps avoids every flow tube, which
    the separation bound rules out for admissible jump budgets."""


class GateSeparationViolated(PatchyFlowError):
    """A single-jump glue found endpoints neither in a common boundary
    component nor near any gate point; the geometry is not generic."""


class ScenarioOutOfRange(PatchyFlowError):
    """A scenario parameter is outside the range where its geometric
    structure is valid."""


class ScenarioFormatError(PatchyFlowError):
    """A scenario file does not conform to the expected schema."""
