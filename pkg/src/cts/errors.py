"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: usage/argument problems -> 1,
data/format problems -> 2, numeric failures -> 3.
"""


class CtsError(Exception):
    """Base class for all package errors."""


class ArgumentError(CtsError):
    """A caller-supplied argument violates an operation's precondition."""


class ParseError(CtsError):
    """Malformed input file content (carries a line number where known)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(CtsError):
    """Structurally valid input that violates the corpus/ontology schema."""


class FormatError(CtsError):
    """A binary store or serialized artifact is corrupt or unsupported."""


class IntegrityError(CtsError):
    """Cross-artifact inconsistency, e.g. embedding dimension mismatch."""


class TransportError(CtsError):
    """Embedding backend unreachable after retries."""

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class DegenerateInputError(CtsError):
    """Input admits no valid pairs (single class, no disjoint label sets)."""


class NumericError(CtsError):
    """Non-finite loss or gradient encountered during training."""


class LeakageError(CtsError):
    """A test-event post was touched by a training stage."""
