"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class HiercastError(Exception):
    """Base class for all package errors."""


class ConfigError(HiercastError):
    """Invalid configuration, hierarchy spec, or CLI arguments."""


class HierarchyError(ConfigError):
    """Structurally invalid hierarchy (cycle, multiple roots, bad sign...)."""


class DataError(HiercastError):
    """Malformed or inconsistent input data."""


class NumericError(HiercastError):
    """Numerical failure: non-finite values, singular systems, off-simplex weights."""


class NotFittedError(HiercastError):
    """A model was asked to predict before fit() ran."""
