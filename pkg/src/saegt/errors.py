"""Exception types shared across the package."""


class SaegtError(Exception):
    """Base class for package errors."""


class InvalidArgument(SaegtError, ValueError):
    pass


class NumericalError(SaegtError, ArithmeticError):
    pass


class GeometryError(SaegtError):
    pass


class ContainmentViolation(SaegtError):
    """The robot left the free space; always a simulation bug."""


class ConfigError(SaegtError, ValueError):
    pass


class TerrainParseError(SaegtError, ValueError):
    def __init__(self, msg, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {msg}" if where else msg)
        self.path = path
        self.line = line


class OutOfBounds(SaegtError, ValueError):
    pass
