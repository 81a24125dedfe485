"""Exception types shared across the library.

All of these derive from ValueError so callers that do not care about the
distinction can catch one base class.  The CLI maps them to exit codes:
usage/format problems exit 2, numeric check failures exit 1.
"""


class DimensionError(ValueError):
    """An array has the wrong rank, shape, or dtype for the requested op."""


class FormatError(ValueError):
    """A serialized file or text spec is malformed."""


class SpecError(ValueError):
    """An architecture or configuration description is invalid."""


class CheckFailure(RuntimeError):
    """A numeric verification (equivalence or gradient check) exceeded tolerance."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""
