"""Exception types shared across the package."""

from __future__ import annotations


class FormationError(Exception):
    """Base class for all package-specific errors."""


class NotSkewSymmetric(FormationError):
    """Matrix handed to unskew() is not antisymmetric within tolerance."""


class Degenerate(FormationError):
    """Matrix with non-positive determinant cannot be projected onto SO(3)."""


class BadIndex(FormationError):
    """Edge references an agent index outside 1..N, or a self-loop."""


class HasCycle(FormationError):
    """Edge list contains a cycle (includes duplicate edges)."""


class NotConnected(FormationError):
    """Edge list leaves the graph disconnected."""


class NegativeTime(FormationError):
    """Performance functions are defined for t >= 0 only."""


class InfeasibleFormation(FormationError):
    """Edge distance constants violate d_col < d_des < d_con."""


class InitialOrientationTooFar(FormationError):
    """psi(0) does not fit under the orientation funnel, or psi(0) >= 2."""


class SingularInertia(FormationError):
    """Inertia matrix is not safely positive definite."""


class ParseError(FormationError):
    """Scenario file is missing, malformed, or not valid JSON."""


class ValidationError(FormationError):
    """Scenario contents violate a documented invariant.

    The message names the offending field path and the inequality that failed.
    """


class SchemaMismatch(FormationError):
    """Trace layout does not match the scenario it is checked against."""


class FunnelViolation(FormationError):
    """A normalized error reached or crossed its funnel boundary.

    Carries enough context to locate the violation: the offending value, the
    open interval it had to stay in, and (when raised by the simulator) the
    edge/agent label and simulation time.
    """

    def __init__(self, value, lower, upper, where="", time=None):
        self.value = float(value)
        self.lower = float(lower)
        self.upper = float(upper)
        self.where = where
        self.time = time
        loc = f" at {where}" if where else ""
        when = f", t={time:.6g}s" if time is not None else ""
        super().__init__(
            f"funnel violation{loc}{when}: value {self.value!r} outside "
            f"({self.lower!r}, {self.upper!r})"
        )
