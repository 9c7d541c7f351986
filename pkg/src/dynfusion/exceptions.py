# -*- coding: utf-8 -*-

"""exceptions.py: Exception hierarchy; each class carries the process exit code used by the command line tool."""


class DynFusionError(Exception):
    """Base class for all errors raised by this package"""
    exit_code = 1


class DimensionError(DynFusionError, ValueError):
    """Tensor shapes or widths do not fit together"""
    exit_code = 4


class ConfigError(DynFusionError):
    """Invalid configuration; collects all problems found"""
    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__('; '.join(self.problems))


class DataError(DynFusionError):
    """Dataset files or records are malformed"""
    exit_code = 3

    def __init__(self, message, filename=None, record=None):
        self.filename = filename
        self.record = record
        location = ''
        if filename is not None:
            location += f' in file [{filename}]'
        if record is not None:
            location += f' at record [{record}]'
        super().__init__(message + location)


class NumericError(DynFusionError, ArithmeticError):
    """Non-finite values or divergence"""
    exit_code = 4


class MetricError(DynFusionError, ValueError):
    """A metric is undefined for the given data"""
    exit_code = 4


class GradCheckError(NumericError):
    """The function under gradient check is not deterministic"""
