"""Exception types raised by the numerical routines.

Every failure mode that callers are expected to handle programmatically gets
its own class; generic programming errors stay as ValueError/TypeError.
"""


class ModwaveError(Exception):
    """Base class for all package-specific errors."""


class NonConvergence(ModwaveError):
    """An iterative solver exhausted its iteration budget."""


class SingularJacobian(ModwaveError):
    """Newton linearization was numerically singular."""


class EigensolverFailure(ModwaveError):
    """Dense eigensolver did not return usable output."""


class DegenerateEigenvalue(ModwaveError):
    """A requested eigenvalue is not simple at the working tolerance."""


class BranchLoss(ModwaveError):
    """Eigenvector overlap tracking lost the branch between grid points."""


class NonpositiveTime(ModwaveError):
    """A kernel or envelope was evaluated at a time where it is undefined."""


class GridTooCoarse(ModwaveError):
    """A convolution kernel is unresolved on the supplied grid."""


class QuadratureNonConvergence(ModwaveError):
    """Internal quadrature failed its refinement self-check."""


class ShapeMismatch(ModwaveError):
    """Array arguments have inconsistent shapes for the requested operation."""


class StepSizeRejected(ModwaveError):
    """Time step failed the startup accuracy self-check."""


class BlowupDetected(ModwaveError):
    """Solution norm exceeded the blowup guard during time integration."""


class InversionFailure(ModwaveError):
    """The coordinate map y = x - h0(x) could not be inverted."""


class AnsatzBreakdown(ModwaveError):
    """Phase extraction produced |psi_x| >= 1, outside the modulation ansatz."""


class DeltaUnresolved(ModwaveError):
    """Delta approximant too wide relative to sqrt(b*t) at the smallest time."""


class MissingSnapshots(ModwaveError):
    """An operation needs more recorded snapshots than the trace contains."""
