"""Exception hierarchy shared by every module."""


class CovertNetError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CovertNetError, ValueError):
    """An argument violates a documented precondition."""


class UnsupportedMethodError(CovertNetError, ValueError):
    """The requested method cannot handle this input (e.g. exact area for N > 2)."""


class SearchBudgetError(CovertNetError, ValueError):
    """An exhaustive search would exceed its configured budget."""


class ConfigError(CovertNetError, ValueError):
    """An experiment or labeling configuration is inconsistent."""
