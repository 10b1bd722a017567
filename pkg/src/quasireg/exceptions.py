"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """Bad shape, size or name passed to a public function."""


class UnsupportedModelError(ValueError):
    """Operation requires model structure (e.g. blocks) that is absent."""


class InitializationError(RuntimeError):
    """MCMC could not start from a point with finite log posterior."""


class AdaptationError(RuntimeError):
    """Every burn-in proposal of some chain was rejected."""


class EstimationError(RuntimeError):
    """Non-finite values reached an estimator."""


class NumericalUnderflowError(EstimationError):
    """A Monte Carlo estimate of a positive integral came out non-positive."""


class ConditioningError(ValueError):
    """Regression design matrix too close to rank deficient."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""
