"""Exception hierarchy shared by every stage of the pipeline.

``ValidationFailure`` subclasses map to CLI exit code 1 and ``FormatError``
subclasses (plus ``OSError``) map to exit code 2.
"""


class GraphSSLError(Exception):
    """Base class for all library errors."""


class ValidationFailure(GraphSSLError, ValueError):
    """Bad arguments or configuration."""


class ZeroVector(ValidationFailure):
    pass


class DimMismatch(ValidationFailure):
    pass


class ShapeMismatch(ValidationFailure):
    pass


class BadTemperature(ValidationFailure):
    pass


class NotADistribution(ValidationFailure):
    pass


class NonFiniteValue(ValidationFailure):
    pass


class UnsupportedPrimitive(GraphSSLError, TypeError):
    pass


class BadSpec(ValidationFailure):
    pass


class TooFewSamples(ValidationFailure):
    pass


class ConfigMismatch(ValidationFailure):
    pass


class EmptyStore(ValidationFailure):
    pass


class EmptySupport(ValidationFailure):
    pass


class BadNode(ValidationFailure, IndexError):
    pass


class DegenerateSplit(ValidationFailure):
    pass


class ParseError(ValidationFailure):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValidationFailure):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class FormatError(GraphSSLError):
    """A binary file on disk is malformed."""


class BadMagic(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class CorruptEdge(FormatError):
    pass
