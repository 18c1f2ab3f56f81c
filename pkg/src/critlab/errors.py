"""Exception types raised by the numerical routines."""


class CritlabError(Exception):
    """Base class for all library errors."""


class NonConvergence(CritlabError):
    """An iterative method did not reach its tolerance."""


class SingularJacobian(CritlabError):
    """A Newton step hit a numerically singular Jacobian."""


class SingularSystem(CritlabError):
    """A linear system (Hermite, Vandermonde, cycle) is numerically singular."""


class MultiplicityBroken(CritlabError):
    """A perturbation changed the multiplicity pattern of the critical points."""


class AmbiguousClassification(CritlabError):
    """A fixed-point multiplier sits too close to 1 to classify reliably."""


class CaseMismatch(CritlabError):
    """The asserted normalization case does not match the map."""


class OrbitCollision(CritlabError):
    """A critical orbit passes too close to a forbidden point."""


class CriticalValueCollision(CritlabError):
    """A probe point coincides with a critical value."""


class DivergenceDetected(CritlabError):
    """A series was detected to diverge."""


class Inconclusive(CritlabError):
    """Tail bounds are too large to decide the rank question."""
