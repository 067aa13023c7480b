"""Error taxonomy shared across the package.

Every failure mode that callers are expected to handle gets its own class so
the CLI can map families of errors onto exit codes (data problems vs
estimation problems vs config problems).
"""


class StratmedError(Exception):
    """Base class for all package errors."""


# ---------------------------------------------------------------- data errors

class DataError(StratmedError):
    """Problems with the input table itself."""


class MissingColumn(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class StrongMonotonicityViolated(DataError):
    """A (z=0, d=1) row is present although the mode forbids it."""


class EmptyCell(DataError):
    """A (z, d) cell required by the positivity assumptions has no rows."""


class InvalidDgp(DataError):
    """A discrete DGP fixture fails its own validity checks."""


# ------------------------------------------------------------- fitting errors

class FitError(StratmedError):
    """Problems while fitting a working model."""


class RankDeficient(FitError):
    pass


class DimensionMismatch(FitError):
    pass


class DegenerateVariance(FitError):
    """A Gaussian model with zero residual variance was used as a density."""


class Separation(FitError):
    """Perfect separation in a logistic fit.

    Fitting never raises this (separated fits are returned with
    ``converged=False``); it exists for callers that want to promote the
    condition to a hard failure.
    """


# ---------------------------------------------------------- estimation errors

class EstimationError(StratmedError):
    """Problems while evaluating an estimator."""


class NegativeScore(EstimationError):
    """A principal score went materially negative (model conflict)."""


class EmptyStratumEstimate(EstimationError):
    """An estimated stratum proportion is not positive."""


class ExtremePropensity(EstimationError):
    """A denominator probability fell below the floor with clipping disabled."""


class DensityRatioOverflow(EstimationError):
    """A mediator density ratio exceeded the overflow guard after clipping."""


class QuadratureOverflow(EstimationError):
    """The outcome model returned a non-finite value at a quadrature node."""


class DivisionByZero(EstimationError):
    """Ratio-scale effect requested with a zero or negative denominator mean."""


class BadFoldCount(EstimationError):
    pass


class TooManyFailedReplicates(EstimationError):
    """More than the tolerated share of bootstrap or study replicates failed."""


class ImpliedNegativePmf(EstimationError):
    """A sensitivity parameter implies a negative stratum mediator pmf."""


class UnsupportedTarget(EstimationError):
    """A (z, z') pair that appears in no effect was requested."""


# ------------------------------------------------------------- config errors

class ConfigError(StratmedError):
    """Invalid or unknown run-configuration content."""
