"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A config object or manifest carries values the pipeline cannot run with."""


class ParseError(ValueError):
    """An input file violates its format contract beyond recovery."""


class UnknownTermError(KeyError):
    """A lookup referenced a term absent from the vocabulary or vector table."""


class TrainingDivergedError(RuntimeError):
    """Training produced non-finite values."""


class UndefinedMetricError(ValueError):
    """A metric has no defined value for the given inputs."""
