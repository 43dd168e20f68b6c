"""Exception hierarchy shared by the engine modules."""


class SplatError(Exception):
    """Base class for every error raised by splatmerge."""


class DegenerateCovarianceError(SplatError, ValueError):
    pass


class SingularCovarianceError(SplatError, ValueError):
    pass


class MasslessPairError(SplatError, ValueError):
    pass


class FeatureMismatchError(SplatError, ValueError):
    pass


class PlanError(SplatError, ValueError):
    """Raised when a merge plan is not a matching or references bad indices."""


class NothingToPairError(SplatError, ValueError):
    pass


class PlyFormatError(SplatError, ValueError):
    """Malformed, unsupported or truncated PLY input."""


class OracleSizeError(SplatError, ValueError):
    """An exhaustive oracle was asked to run past its size cap."""
