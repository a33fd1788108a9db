"""Exception types shared across the package."""


class ModelEvaluationError(ValueError):
    """Raised when a dynamics model is evaluated on non-finite inputs."""


class SingularReferenceError(ValueError):
    """Raised when a reference implies zero specific force (thrust direction undefined)."""


class GeometryError(ValueError):
    """Raised on degenerate geometric configurations (collinear attachments, zero distances)."""


class ConfigError(ValueError):
    """Raised for invalid scenario or solver configuration."""
