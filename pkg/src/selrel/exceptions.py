"""Exception types raised across the package.

All inherit from ValueError so callers that only care about "bad input"
can catch one base class, while tests and the CLI can distinguish the
failure kind.
"""


class SizeError(ValueError):
    """A volume or grid does not meet a dimensional precondition."""


class InputError(ValueError):
    """Arguments are structurally invalid (shape mismatch, empty input, ...)."""


class FormatError(ValueError):
    """A binary file does not match its declared format.

    ``offset`` is the byte offset at which the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class LoadError(ValueError):
    """A model could not be assembled from its architecture and weights."""


class EmptyRelevanceError(ValueError):
    """A metric is undefined because the relevance support is empty."""
