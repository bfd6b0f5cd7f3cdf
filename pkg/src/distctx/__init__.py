"""Distributed linear bandits with context distributions."""

from distctx.errors import ConfigError, ContractError, DataError, DegenerateMatrixError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "DegenerateMatrixError",
    "__version__",
]
