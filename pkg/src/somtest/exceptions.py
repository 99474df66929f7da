"""Exception types raised by somtest."""


class SomTestError(ValueError):
    """Base class for all errors raised by this package."""


class ShapeError(SomTestError):
    """Array shapes or dimensions do not agree."""


class DegenerateTestError(SomTestError):
    """The test statistic or its null distribution is undefined for the input."""


class MalformedDocumentError(SomTestError):
    """A serialized document is missing fields, has the wrong version, or is inconsistent."""


class CsvFormatError(SomTestError):
    """An input CSV file does not follow the expected layout."""


class PowerRunError(RuntimeError):
    """A Monte-Carlo repetition failed; the message names the failing seed."""
