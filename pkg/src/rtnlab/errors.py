"""Exception types shared across the package."""


class RtnlabError(Exception):
    pass


class DimensionError(RtnlabError, ValueError):
    """Operand shapes are incompatible."""


class ArgumentError(RtnlabError, ValueError):
    pass


class UnsupportedArityError(ArgumentError):
    pass


class NumericError(RtnlabError, ArithmeticError):
    pass


class ConfigError(RtnlabError, ValueError):
    """Invalid configuration; ``field`` is the dotted path of the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DataError(RtnlabError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class CheckpointError(RtnlabError):
    pass
