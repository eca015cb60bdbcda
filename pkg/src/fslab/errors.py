"""Exception hierarchy shared by all fslab modules."""


class FslabError(Exception):
    """Base class for every error raised deliberately by fslab."""


class ConfigError(FslabError, ValueError):
    """Invalid user configuration or mismatched inputs."""


class DegenerateCellError(FslabError, ValueError):
    """Lattice vectors are singular or not right-handed."""


class OffMeshError(FslabError, ValueError):
    """A k-point is not a member of the mesh it is used with."""


class ResourceError(FslabError, RuntimeError):
    """A requested enumeration or allocation exceeds its configured bound."""


class AccuracyError(FslabError, ValueError):
    """Lattice-sum cutoffs are too small for the requested tail bound."""


class IntegrandDefectError(FslabError, ValueError):
    """An integrand evaluates to a non-finite value away from its singular points."""


class InvalidSpecError(FslabError, ValueError):
    """Parameters violate the hypotheses of the construction they configure."""


class DegenerateSeriesError(FslabError, ValueError):
    """A convergence or scaling series cannot support the requested fit."""


class NotAnInsulatorError(FslabError, ValueError):
    """The occupied and virtual bands are not separated by the gap floor."""


class DegeneracyError(FslabError, ValueError):
    """Two bands are degenerate, so a smooth gauge cannot be fixed."""


class GaugeObstructionError(FslabError, ValueError):
    """The gauge reference component vanishes somewhere on the mesh."""


class InvalidTupleError(FslabError, ValueError):
    """An ERI index tuple violates crystal-momentum conservation."""


class MeshMismatchError(FslabError, ValueError):
    """Objects built on different k-meshes were combined."""


class SingularDenominatorError(FslabError, ArithmeticError):
    """An orbital-energy denominator is too close to zero."""


class DivergenceError(FslabError, ArithmeticError):
    """A fixed-point iteration produced non-finite or exploding amplitudes."""


class MeshCompatibilityError(FslabError, ValueError):
    """A k-point required on two meshes is missing from one of them."""
