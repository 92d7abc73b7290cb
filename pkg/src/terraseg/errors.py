"""Exception hierarchy shared across the package.

Every error carries a machine-parsable ``category`` that the CLI maps to an
exit code: "config" -> 2, "data" -> 3, anything else -> 4.
"""


class TerrasegError(Exception):
    """Base class for all package errors."""

    category = "runtime"


class ShapeError(TerrasegError):
    """An array or tensor has extents incompatible with the operation."""


class ParameterError(TerrasegError):
    """An argument value is outside its documented domain."""


class GraphError(TerrasegError):
    """A network graph is malformed (cycle, dangling input, shape clash)."""


class ConfigError(TerrasegError):
    """The pipeline configuration is missing, malformed, or mistyped."""

    category = "config"


class DataError(TerrasegError):
    """Input data violates a precondition (bad labels, missing tile, ...)."""

    category = "data"


class WktParseError(DataError):
    """WKT text could not be parsed; ``offset`` is a byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class StoreConflictError(DataError):
    """A store node already exists with an incompatible kind or metadata."""


class StoreNotFoundError(DataError):
    """A store group, array, or chunk region does not exist."""


class IntegrityError(DataError):
    """Stored bytes fail their checksum."""


class StoreLockError(TerrasegError):
    """A concurrent writer holds the advisory lock."""


class CheckpointFormatError(DataError):
    """A checkpoint file is truncated or corrupt; ``offset`` points at the
    first byte that failed to parse or verify."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class EmptyLossError(DataError):
    """Every pixel of a loss target is ignored."""


class UndefinedMetricError(DataError):
    """A requested metric has no defined value on the given counts."""


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code contract."""
    if isinstance(exc, TerrasegError):
        return {"config": 2, "data": 3}.get(exc.category, 4)
    return 4
