"""
Exception types shared by the library and the experiment runner.

Every error also subclasses ValueError so callers that only know the
builtin still catch it.
"""

from typing import Optional


class MkmtrlError(ValueError):
    """Base class for all library errors"""


class ParseError(MkmtrlError):
    def __init__(self, message: str, line_number: Optional[int] = None, path: Optional[str] = None):
        self.line_number = line_number
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line_number is not None:
            where += f":{line_number}" if where else f"line {line_number}"
        super().__init__(f"{where}: {message}" if where else message)


class DimensionError(MkmtrlError):
    pass


class ConfigError(MkmtrlError):
    pass


class SplitError(MkmtrlError):
    pass


class KernelError(MkmtrlError):
    pass


class SolverError(MkmtrlError):
    pass


class ConvergenceError(MkmtrlError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual={residual:.3e})")


class RelationshipError(MkmtrlError):
    pass


class TrainingError(MkmtrlError):
    def __init__(self, message: str, task: Optional[int] = None):
        self.task = task
        super().__init__(f"task {task}: {message}" if task is not None else message)


class CrossValidationError(MkmtrlError):
    pass


class MetricError(MkmtrlError):
    pass
