"""Exception types shared across the simulator."""


class FedGreedError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FedGreedError, ValueError):
    """Inconsistent experiment, model or aggregator configuration."""


class InvalidInputError(FedGreedError, ValueError):
    """Arguments that violate an operation's preconditions."""


class FormatError(FedGreedError, ValueError):
    """Malformed on-disk data (IDX files, CSV, config)."""


class PartitionInfeasibleError(FedGreedError, RuntimeError):
    """Dirichlet partitioning could not give every client a sample."""
