"""Exception types shared across the package.

Every error raised on purpose derives from ValueError so callers can catch
broadly; the CLI maps the concrete classes onto distinct exit codes.
"""


class FormatError(ValueError):
    """A binary stream does not conform to the on-disk format."""


class InvalidSetError(ValueError):
    """An embedding set violates its invariants.

    Carries the list of violations produced by ``store.validate_set``.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        summary = "; ".join(str(v) for v in self.violations)
        super().__init__(f"embedding set is invalid: {summary}")


class DimensionMismatchError(ValueError):
    """Vector or matrix dimensions are incompatible."""


class KOutOfRangeError(ValueError):
    """Neighborhood size k is outside [1, joint point count)."""


class MissingGroundTruthError(ValueError):
    """A probe has no relevant gallery item and cannot be scored."""


class DuplicateTagError(ValueError):
    """Two dataset manifests carry the same dataset tag."""


class UnknownLabelError(ValueError):
    """A (dataset_tag, raw_label) pair is not present in a combined mapping."""
