"""Exception types shared across the framework."""


class MeshError(ValueError):
    """Invalid or degenerate mesh data."""


class MappingError(ValueError):
    """Periodic vertex pairing could not be established."""


class ShapeError(ValueError):
    """Ill-shaped form expression (incompatible value shapes)."""


class NonlinearityError(ValueError):
    """A term is not linear in the trial function where linearity is required."""


class AssemblyError(RuntimeError):
    """Form could not be assembled."""


class SingularMatrixError(RuntimeError):
    """Factorization hit a zero pivot."""


class ConstraintError(ValueError):
    """Boundary or periodic constraint is inconsistent with the system."""


class ConfigError(ValueError):
    """Bad run configuration."""


class FormulaError(ValueError):
    """Derived-quantity formula failed to parse or referenced an unbound name."""


class UnknownSchemeError(LookupError):
    """Requested scheme or model name is not registered."""
