"""Exception types shared across the package."""


class VesselSegError(Exception):
    """Base class for package errors."""


class ShapeError(VesselSegError):
    """Tensor/volume shape or axis mismatch; message names the axes."""


class FormatError(VesselSegError):
    """Malformed or unsupported file content; message names the field."""


class DegenerateInputError(VesselSegError):
    """Input violates a numeric precondition (empty mask, zero variance...)."""


class ConfigError(VesselSegError):
    """Invalid configuration or command-line parameters."""


class TrainingDivergedError(VesselSegError):
    """Loss became non-finite; message names the epoch and batch."""
