"""Exception types shared across the package.

Each error carries a stable CLI exit code so that `gminfer` subcommands can map
failures onto the documented contract (2 config, 3 numerical, 4 verification,
5 I/O).
"""


class GminferError(Exception):
    exit_code = 1


class ConfigInvalid(GminferError):
    exit_code = 2


class ShapeMismatch(GminferError, ValueError):
    exit_code = 2


class NumericalFailure(GminferError):
    exit_code = 3


class NotPositiveDefinite(NumericalFailure):
    pass


class NonFiniteUpdate(NumericalFailure):
    pass


class DivergedTraining(NumericalFailure):
    pass


class TooFewSamples(NumericalFailure, ValueError):
    pass


class VerificationFailure(GminferError):
    exit_code = 4


class DegenerateFit(VerificationFailure):
    pass


class IoFailure(GminferError):
    exit_code = 5
