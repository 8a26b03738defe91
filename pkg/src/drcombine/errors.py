"""Exception types raised across the package."""


class DrCombineError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DrCombineError, ValueError):
    """Invalid scenario, formula, learner or run configuration."""


class DesignError(DrCombineError, ValueError):
    """A sampling design cannot be realised with the given inputs."""


class NumericDegeneracyError(DrCombineError, RuntimeError):
    """A randomised or iterative procedure hit its safety cap."""


class FoldError(DrCombineError, ValueError):
    """A cross-fitting fold has no usable training data."""


class ConvergenceError(DrCombineError, RuntimeError):
    """An iterative solver failed to converge."""


class EstimationError(DrCombineError, ValueError):
    """An estimator is undefined for the supplied data."""


class RankDeficiencyError(DrCombineError, ValueError):
    """A parametric design matrix does not have full column rank."""
