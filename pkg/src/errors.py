class LabError(Exception):
    """Base class for all errors raised by the averaging lab"""


class ConfigError(LabError, ValueError):
    """Invalid parameters, violated preconditions or malformed config files"""


class DimensionError(ConfigError):
    """Mismatch between mode count n, noise columns or state space"""


class NumericalError(LabError, ArithmeticError):
    """Non-finite values, failed PSD roots or non-converging quadratures"""
