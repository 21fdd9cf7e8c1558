"""Exception taxonomy shared by all towerlab modules."""


class TowerlabError(Exception):
    """Base class for all towerlab errors."""


class ParameterOutOfRange(TowerlabError):
    """A numeric parameter violates its admissible range."""


class ProbabilityNotNormalized(TowerlabError):
    """Branch probabilities do not sum to one within tolerance."""


class NonpositiveReturnTime(TowerlabError):
    """A branch return time is smaller than one."""


class LevelMismatch(TowerlabError):
    """An operation defined on base points received a point above the base."""


class DepthInsufficient(TowerlabError):
    """A computation requires symbols beyond the available depth."""


class HorizonExceeded(TowerlabError):
    """A partial-sum index exceeds the recorded trace length."""


class HorizonTooSmall(TowerlabError):
    """The truncation horizon is too small for the requested statistic."""


class EnumerationTooLarge(TowerlabError):
    """Exact enumeration would exceed the cylinder budget."""


class NotATowerSystem(TowerlabError):
    """A tower-only estimator was handed a non-tower system."""


class PNotAdmissible(TowerlabError):
    """The moment index p violates p > max(2, 2*beta)."""


class InsufficientData(TowerlabError):
    """Too few usable points in the fit window."""


class ZeroValues(TowerlabError):
    """Fit input contains no usable positive values."""


class UnknownFamily(TowerlabError):
    """Requested catalog family does not exist."""


class DiskTouchesWall(TowerlabError):
    """The scatterer has no clearance from the outer rectangle."""


class TangencyUnresolved(TowerlabError):
    """The next collision is tangential within tolerance; caller resamples."""


class NoIntersection(TowerlabError):
    """A collision ray escaped the boundary; indicates a geometry bug."""


class ConfigInvalid(TowerlabError):
    """Experiment configuration is missing or malformed; names the field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")
