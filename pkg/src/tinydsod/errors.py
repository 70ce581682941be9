"""Exception hierarchy shared by every module."""


class TinyDSODError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TinyDSODError, ValueError):
    """Inconsistent architecture, layer or tensor configuration."""


class ConfigSyntaxError(ConfigError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class InvalidParametersError(TinyDSODError, ValueError):
    """Numerically invalid parameters (e.g. a negative variance)."""


class WeightError(TinyDSODError):
    """Base class for weight-container problems."""


class MissingWeightError(WeightError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(name)

    def __str__(self):
        return f"missing weight '{self.name}'"


class UnexpectedWeightError(WeightError):
    pass


class ShapeMismatchError(WeightError):
    pass


class BadMagicError(WeightError):
    pass


class UnsupportedVersionError(WeightError):
    pass


class TruncatedFileError(WeightError):
    pass


class TrailingDataError(WeightError):
    pass


class ImageFormatError(TinyDSODError):
    pass
