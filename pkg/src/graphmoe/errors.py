"""Exception hierarchy shared by every subsystem.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericalError -> 3.
"""


class GraphMoeError(Exception):
    """Base class for all library errors."""


class ConfigError(GraphMoeError):
    """Invalid configuration: unknown keys, out-of-range values, bad modes."""


class DataError(GraphMoeError):
    """Malformed input data: files, shapes, index ranges, split masks."""


class ShapeError(GraphMoeError):
    """Incompatible tensor shapes detected at op construction time."""


class NumericalError(GraphMoeError):
    """Non-finite values or degenerate denominators during compute."""


class CheckpointError(GraphMoeError):
    """Missing, unreadable, or incompatible checkpoint files."""
