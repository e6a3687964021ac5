class NtkLabError(Exception):
    """Base class for package errors."""


class ConfigError(NtkLabError, ValueError):
    pass


class ParseError(NtkLabError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class NumericFailure(NtkLabError, ArithmeticError):
    def __init__(self, message: str, arch_id: str | None = None):
        if arch_id is not None:
            message = f"{message} [arch {arch_id}]"
        super().__init__(message)
        self.arch_id = arch_id


class DivergenceError(NumericFailure):
    def __init__(self, step: int, arch_id: str | None = None):
        super().__init__(f"training diverged at step {step}", arch_id)
        self.step = step


class ConvergenceError(NumericFailure):
    pass


class UndefinedCorrelation(NtkLabError, ValueError):
    pass


class EvaluatorError(NtkLabError, RuntimeError):
    def __init__(self, message: str, partial_trace=None):
        super().__init__(message)
        self.partial_trace = partial_trace
