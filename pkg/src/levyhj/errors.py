"""Exception hierarchy shared by all modules."""


class LevyHJError(Exception):
    """Base class for library errors."""


class ZeroPoint(LevyHJError, ValueError):
    """A density was requested at z = 0."""


class NoDensity(LevyHJError):
    """The family has no Lebesgue density (purely atomic)."""


class QuadratureDivergence(LevyHJError):
    """Shell contributions near the origin do not decay (order >= 2)."""


class GridTooCoarse(LevyHJError):
    """A cell or grid does not meet the requested resolution."""


class JumpOutOfBounds(LevyHJError):
    """A jump function violated c0|z| <= |j(xi,z)| <= c1|z|."""


class GridMismatch(LevyHJError):
    """Two discretized measures live on incompatible polar grids."""


class TooManyAtoms(LevyHJError):
    """A transport problem exceeds the exact-solver size cap."""


class NotAdmissible(LevyHJError):
    """A coupling fails the marginal constraints."""


class UnsupportedVariant(LevyHJError):
    """The operation is not defined for this measure family."""


class MissingFarField(LevyHJError):
    """No rule is available to evaluate u outside its domain."""


class NotConverged(LevyHJError):
    """An iteration hit its cap before reaching tolerance."""


class CFLViolation(LevyHJError):
    """A requested time step breaks the monotonicity bound."""


class OrderingViolation(LevyHJError):
    """A declared sub-solution exceeds the declared super-solution."""


class ConfigError(LevyHJError):
    """Malformed or out-of-range configuration."""


class CertificationFailed(LevyHJError):
    """A declared sub- or supersolution does not pass its certificate."""
