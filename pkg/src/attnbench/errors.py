"""Exception types shared across the package."""


class AttnBenchError(Exception):
    """Base class for all package errors."""


class ShapeError(AttnBenchError, ValueError):
    pass


class DegenerateRowError(AttnBenchError, ValueError):
    """A mask row permits no keys at all."""


class UnknownParameterError(AttnBenchError, KeyError):
    pass


class EvaluationError(AttnBenchError, ArithmeticError):
    """A scalar objective produced a non-finite value."""


class DomainError(AttnBenchError, ValueError):
    """An input lies outside the domain of a transformation."""


class LengthError(AttnBenchError, ValueError):
    pass


class ConfigError(AttnBenchError, ValueError):
    pass


class DivergenceError(AttnBenchError, ArithmeticError):
    def __init__(self, step, loss):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss
