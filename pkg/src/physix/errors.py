"""Exception hierarchy shared across the pipeline.

The CLI maps these onto process exit codes, so keep the top-level split
(config / data / training / pairing) stable.
"""


class PhysixError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(PhysixError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(PhysixError):
    """Problems with input data or containers (exit code 3)."""


class MissingChannelError(DataError):
    """A container is missing a channel declared by the dataset spec."""


class ShapeMismatchError(DataError):
    """Stored array shape disagrees with the dataset spec."""


class NonFiniteDataError(DataError):
    """Input data contains NaN or infinite values."""


class StabilityError(DataError):
    """Integrator time step violates the explicit stability bound."""


class NormalizationStateError(DataError):
    """Normalization applied to a sequence in the wrong state."""


class TrainingDivergedError(PhysixError):
    """Training loss became non-finite (exit code 4)."""


class PairingError(PhysixError):
    """Checkpoint content hashes do not form a consistent stack (exit code 5)."""
