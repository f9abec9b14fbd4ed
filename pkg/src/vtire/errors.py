"""Exception types shared across the package."""


class VTireError(Exception):
    pass


class DimensionError(VTireError, ValueError):
    pass


class LabelError(VTireError, ValueError):
    pass


class DataError(VTireError, ValueError):
    pass


class ConfigError(VTireError, ValueError):
    pass


class AssemblyError(VTireError, RuntimeError):
    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class SolverError(VTireError, RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])


class FitError(VTireError, ValueError):
    pass


class DatasetIOError(VTireError, OSError):
    """A dataset file is missing, unreadable or does not match its manifest entry."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
