"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 3, DataError -> 4,
NumericError -> 5. Anything argparse rejects exits 2 on its own.
"""


class ScamError(Exception):
    """Base class for package errors."""


class ConfigError(ScamError):
    """Invalid or inconsistent configuration."""


class DataError(ScamError):
    """Missing, malformed, or mismatched dataset content."""


class NumericError(ScamError):
    """Numeric failure (non-finite loss, invalid metric input)."""


class TrainingDiverged(NumericError):
    """A loss became non-finite during training."""


class CheckpointError(ScamError):
    """Malformed checkpoint container."""
