"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
single machine-parseable token on failure.
"""


class MMRecError(Exception):
    category = "error"


class DimensionError(MMRecError, ValueError):
    category = "dimension"


class DegenerateMaskError(MMRecError, ValueError):
    category = "degenerate-mask"


class NumericDivergenceError(MMRecError, FloatingPointError):
    category = "numeric-divergence"

    def __init__(self, param_name, message=None):
        self.param_name = param_name
        super().__init__(message or f"non-finite gradient in parameter {param_name!r}")


class ParseError(MMRecError, ValueError):
    category = "parse"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateError(MMRecError, ValueError):
    category = "duplicate"


class PoolExhaustedError(MMRecError, ValueError):
    category = "pool-exhausted"


class ConfigError(MMRecError, ValueError):
    category = "config"


class EncodingError(MMRecError, ValueError):
    category = "encoding"


class InsufficientDataError(MMRecError, ValueError):
    category = "insufficient-data"


class ColdStartError(MMRecError, ValueError):
    category = "cold-start"


class EmptyEvaluationError(MMRecError, ValueError):
    category = "empty-evaluation"


class DegenerateTestError(MMRecError, ValueError):
    category = "degenerate-test"


class SetSizeError(MMRecError, ValueError):
    category = "set-size"


class CompatibilityError(MMRecError, ValueError):
    category = "compatibility"


class CheckpointError(MMRecError, ValueError):
    category = "checkpoint"
