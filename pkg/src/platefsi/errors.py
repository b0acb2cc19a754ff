"""Exception types raised by the library.

Input-validation failures subclass ValueError so that callers who do not
care about the fine-grained type can catch the builtin.
"""


class PlateFsiError(Exception):
    """Base class for all library-specific errors."""


class OddLayerCount(PlateFsiError, ValueError):
    """Channel element count across the thickness must be even."""


class NonPositiveDimension(PlateFsiError, ValueError):
    """Geometric dimensions and element counts must be positive."""


class DisconnectedSolid(PlateFsiError, ValueError):
    """Solid voxel phase of a unit cell is not face-connected."""


class EmptyPhase(PlateFsiError, ValueError):
    """Unit cell is missing a required material phase."""


class NoFluidPhase(PlateFsiError, ValueError):
    """Permeability solve requested on a cell without fluid voxels."""


class UnsupportedSpace(PlateFsiError, ValueError):
    """Unknown finite-element space identifier."""


class DofMismatch(PlateFsiError, ValueError):
    """Degree-of-freedom maps passed to an assembler do not fit together."""


class SingularPermeability(PlateFsiError, ValueError):
    """Interface permeability matrix is not symmetric positive definite."""


class NonCoerciveTensor(PlateFsiError, ValueError):
    """Plate stiffness tensor fails its coercivity check."""


class InconsistentOffsets(PlateFsiError, ValueError):
    """Block sizes disagree with the composite dof layout."""


class ConstraintViolation(PlateFsiError, ValueError):
    """Material parameters violate a required algebraic constraint."""


class SolverFailure(PlateFsiError, RuntimeError):
    """A linear or nonlinear solve did not produce a usable result."""


class SingularMatrix(SolverFailure):
    """Direct factorization detected a (numerically) singular matrix."""


class MaxIterations(SolverFailure):
    """Iterative solver exhausted its iteration budget."""


class SingularFit(PlateFsiError, RuntimeError):
    """Darcy-fit velocity data is too degenerate to identify a tensor."""


class ParseError(PlateFsiError, ValueError):
    """A text input (config, mask, tensor file) could not be parsed."""


class ValidationError(PlateFsiError, ValueError):
    """A parsed configuration is structurally valid but semantically wrong.

    Carries the complete list of violations, not only the first one.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class IoError(PlateFsiError, OSError):
    """File could not be read or written."""
