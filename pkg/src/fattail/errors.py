"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or inadmissible problem parameters."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class NumericalError(RuntimeError):
    """Quadrature or iteration produced non-finite values."""
