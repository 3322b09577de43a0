"""Common exception base for the avgcell package."""


class AvgcellError(Exception):
    """Base class for all errors raised by avgcell."""
