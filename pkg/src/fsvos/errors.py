"""Exception taxonomy and process exit codes."""


class FsvosError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FsvosError, ValueError):
    """Invalid configuration: unknown class names, overlapping splits, bad schedules."""


class ValidationError(FsvosError, ValueError):
    """Invalid runtime input: non-binary masks, out-of-range images, bad arguments."""


class ShapeError(ValidationError):
    """Array shapes incompatible with an operation's contract."""


class SamplingError(FsvosError, RuntimeError):
    """Episode sampling could not satisfy the requested shot/query counts."""


class ProtocolError(FsvosError, RuntimeError):
    """Violation of the base/novel split protocol (class leakage)."""


class NumericError(FsvosError, RuntimeError):
    """Non-finite loss or other numeric breakdown during optimization."""


class CheckpointError(FsvosError, RuntimeError):
    """Checkpoint missing, malformed, or failing integrity verification."""


class FreezeViolation(FsvosError, AssertionError):
    """A parameter under a freeze contract was mutated."""


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
