"""Exception types shared across the package.

``InputError`` subclasses signal bad inputs or violated preconditions (CLI
exit code 1); ``RuntimeFailure`` subclasses signal failures during an
otherwise valid run (CLI exit code 2).
"""


class PovmapError(Exception):
    """Base class for every error raised by this package."""


class InputError(PovmapError):
    """Invalid input data, configuration, or argument."""


class RuntimeFailure(PovmapError):
    """Fatal failure while executing a valid request."""


# -- survey/covariate ingestion -------------------------------------------

class MissingColumn(InputError):
    pass


class NegativeIncome(InputError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class NonFiniteInput(InputError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class NonPositiveWeight(InputError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class UrbanicityOutOfRange(InputError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class DuplicateHousehold(InputError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class PercentOutOfRange(InputError):
    pass


class NonPositiveWage(InputError):
    pass


class ZeroVarianceColumn(InputError):
    pass


class RosterMismatch(InputError):
    pass


class ConfigError(InputError):
    pass


# -- sampler ----------------------------------------------------------------

class EmptyGroup(InputError):
    pass


class InsufficientDraws(InputError):
    pass


class SingularPosteriorCovariance(RuntimeFailure):
    pass


class SliceNonConvergence(RuntimeFailure):
    pass


# -- FGT evaluation and direct estimates ------------------------------------

class NonPositiveSigma(InputError):
    pass


class NonPositiveLine(InputError):
    pass


class NegativeAlpha(InputError):
    pass


class EmptyDomain(InputError):
    pass


# -- decision layer ----------------------------------------------------------

class TooFewDraws(InputError):
    pass


class CutoffOutOfRange(InputError):
    pass


class NonPositiveRegionalEstimate(InputError):
    pass


class SingleComuna(InputError):
    pass


# -- synthetic data -----------------------------------------------------------

class InvalidSizes(InputError):
    pass


class InfeasibleDesign(InputError):
    pass


# -- pipeline -----------------------------------------------------------------

class MissingArtifact(RuntimeFailure):
    pass
