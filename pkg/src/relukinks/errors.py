"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid hyperparameters, descriptors or CLI configuration."""


class DomainError(ValueError):
    """Input outside an operation's domain (empty data, x = 0, ...)."""


class NumericalError(ArithmeticError):
    """Singular moment matrix, non-convergent eigensolver, non-finite state."""


class SingularityError(NumericalError):
    """A per-side moment matrix is (numerically) singular."""
