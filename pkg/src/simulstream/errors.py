"""Exception hierarchy shared by every stage of the runtime."""


class SimulStreamError(Exception):
    """Base class for all runtime errors."""


class ConfigError(SimulStreamError, ValueError):
    pass


class InputError(SimulStreamError, ValueError):
    """Malformed audio or packet input."""


class SequencingError(SimulStreamError):
    """Frames delivered out of order or mis-paired."""


class SchedulingError(SimulStreamError):
    """A decoder step was requested that the wait-k schedule forbids."""


class NumericError(SimulStreamError, ArithmeticError):
    pass


class FormatError(SimulStreamError):
    """Base class for weight-file format problems."""


class CorruptHeaderError(FormatError):
    pass


class TruncatedFileError(FormatError):
    def __init__(self, message, tensor_name=None):
        super().__init__(message)
        self.tensor_name = tensor_name


class DtypeError(FormatError):
    pass
