class FactorialError(Exception):
    """Base class for every error raised by the factorial package"""


class ParameterError(FactorialError, ValueError):
    """An argument is outside the range an operation accepts"""


class CapabilityError(FactorialError):
    """The request is valid but larger than the implementation supports"""


class DistributionParseError(ParameterError):
    """A target distribution file could not be parsed"""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
