"""Exception taxonomy shared across the pipeline.

ValidationError subclasses map to CLI exit code 2 (bad inputs, bad
schemas, bad flags); anything else that escapes maps to exit code 3.
"""


class SpectrasepError(Exception):
    """Base class for all package errors."""


class ValidationError(SpectrasepError):
    """Invalid input data, configuration, or file schema."""


class CubeFormatError(ValidationError):
    """Malformed cube file (magic, header, payload, or value domain)."""


class CalibrationError(ValidationError):
    """Reference cubes unusable for reflectance calibration."""


class AnnotationError(ValidationError):
    """Region annotation inconsistent with the image it refers to."""


class IngestionError(ValidationError):
    """Clinical CSV or labels CSV violates the parameter dictionary."""


class ConfigError(ValidationError):
    """Score table, index config, or CLI config file is invalid."""


class StatisticsError(SpectrasepError):
    """Statistical operation undefined for the given samples."""


class EvaluationError(SpectrasepError):
    """Split, ensemble, or metric computation cannot proceed."""
