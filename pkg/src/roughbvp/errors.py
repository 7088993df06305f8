"""Exception types shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; generic misuse stays a plain ValueError.
"""


class RoughBVPError(Exception):
    """Base class for all package-specific failures."""


# -- geometry ---------------------------------------------------------------

class EmptyDomain(RoughBVPError):
    """A domain predicate or construction selected no cells."""


class Disconnected(RoughBVPError):
    """The selected cell set is not 4-connected."""


class ResolutionTooCoarse(RoughBVPError):
    """The grid cannot resolve the requested prefractal level."""


class WidthBelowResolution(RoughBVPError):
    """A slit width fell under the two-cell minimum."""


class GridMismatch(RoughBVPError):
    """Two grid objects were combined but live on different grids."""


# -- measures ---------------------------------------------------------------

class EmptyRadii(RoughBVPError):
    """A regularity audit was asked to scan an empty radius ladder."""


# -- discretization ---------------------------------------------------------

class AtomOutsideDomain(RoughBVPError):
    """A measure atom lies outside the closed pixelation of the domain."""


# -- solver -----------------------------------------------------------------

class IncompatibleNeumann(RoughBVPError):
    """Pure Neumann data whose total source does not balance."""


class SingularSystem(RoughBVPError):
    """The iterative solver broke down or failed to converge."""


class ConstraintKillsEverything(RoughBVPError):
    """Dirichlet elimination removed every degree of freedom."""


class DofMismatch(RoughBVPError):
    """A vector was evaluated against forms from a different dof map.

    Signals the infinite branch of the shape energy: the candidate field
    does not live in the candidate space, so its energy is +infinity by
    convention. Raised as a typed marker instead of returning float inf.
    """


class NotASolution(RoughBVPError):
    """A boundary-flux pairing was requested for a non-converged field."""


# -- spectral ---------------------------------------------------------------

class ConvergenceFailure(RoughBVPError):
    """The eigenvalue iteration did not converge within its restarts."""


class IntervalCutsEigenvalue(RoughBVPError):
    """A spectral window endpoint sits on top of a computed eigenvalue."""


class InsufficientCount(RoughBVPError):
    """The spectral window may contain eigenvalues beyond the computed set."""


class DegenerateConstraint(RoughBVPError):
    """A one-dimensional deflation constraint vanished identically."""


# -- experiments ------------------------------------------------------------

class NoAdmissibleCandidate(RoughBVPError):
    """Every candidate of a shape search failed the admissibility audit."""


class TooFewCandidates(RoughBVPError):
    """Sequence diagnostics need at least three admissible candidates."""
