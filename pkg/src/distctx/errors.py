"""Exception types shared across the package."""

import numpy as np


class ContractError(ValueError):
    """A caller broke an operation's precondition (shape, mode, range)."""


class DegenerateMatrixError(np.linalg.LinAlgError):
    """A matrix expected to be positive definite failed to factor."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class DataError(ValueError):
    """Malformed or missing input data (ratings, factors)."""
