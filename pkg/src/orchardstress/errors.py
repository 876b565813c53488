"""Shared exception types for the pipeline's failure classes."""


class FormatError(ValueError):
    """A file or record does not conform to its documented format."""


class DegenerateDataError(ValueError):
    """Input data is too small, constant, or otherwise unusable."""
