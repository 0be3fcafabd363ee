"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class RangeError(ArithmeticError):
    """Result not representable in double precision."""


class UnsupportedError(ValueError):
    """Operation not defined for the given profile or dimension."""


class NumericalError(RuntimeError):
    """Fatal breakdown inside a numerical kernel."""


class DomainTooSmall(RuntimeError):
    """Boundary-leak monitor tripped: too much mass near r_max."""

    def __init__(self, t, leak, threshold):
        self.t = t
        self.leak = leak
        self.threshold = threshold
        super().__init__(
            f"DOMAIN_TOO_SMALL at t={t:.6g}: boundary mass fraction "
            f"{leak:.3e} exceeds leak_threshold {threshold:.3e}"
        )


class ConfigError(ValueError):
    """Invalid experiment configuration; carries the offending key path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
