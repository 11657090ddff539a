"""Exception types shared across the package."""


class EstimationError(Exception):
    """Base class for all stlasso errors."""


class DimensionError(EstimationError):
    """Array shapes do not line up with the declared panel/model sizes."""


class DomainError(EstimationError):
    """A scalar argument is outside its admissible range."""


class SingularityError(EstimationError):
    """The spatial filter (I - W) is numerically singular."""


class FeasibilityError(EstimationError):
    """Parameters violate the model's constraint set."""


class NumericalError(EstimationError):
    """The objective became NaN/Inf or a solve failed during iteration."""


class IngestError(EstimationError):
    """Input data files cannot be turned into a usable panel."""


class SearchError(EstimationError):
    """Every candidate in a hyperparameter search failed."""
