"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class OutOfDomain(ValueError):
    pass


class NumericFailure(ArithmeticError):
    pass


class DegenerateMetric(ZeroDivisionError):
    pass


class LinearAlgebraFailure(ArithmeticError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class TrainingDiverged(NumericFailure):
    """Raised when the training loss becomes non-finite; keeps the history so far."""

    def __init__(self, message, history=None, params=None):
        super().__init__(message)
        self.history = history if history is not None else []
        self.params = params


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists offending keys."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))
