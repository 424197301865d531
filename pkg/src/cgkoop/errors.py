"""Exception hierarchy shared by all cgkoop modules."""


class CgkoopError(Exception):
    """Base class for all package errors."""


class ShapeError(CgkoopError):
    """Operands have incompatible or invalid dimensions."""


class ConfigError(CgkoopError):
    """A configuration value violates a cross-field constraint."""


class NumericalError(CgkoopError):
    """A numerical routine failed (non-SPD matrix, singular system, ...)."""

    def __init__(self, message, pivot_index=None, step_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index
        self.step_index = step_index


class DivergenceError(CgkoopError):
    """An iteration produced non-finite values."""

    def __init__(self, message, step_index=None, epoch=None):
        super().__init__(message)
        self.step_index = step_index
        self.epoch = epoch
