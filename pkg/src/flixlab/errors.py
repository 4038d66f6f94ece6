"""Exception types shared across the package."""


class FlixError(Exception):
    pass


class InvalidArgument(FlixError, ValueError):
    pass


class InvalidState(FlixError):
    pass


class Unsupported(FlixError):
    pass


class ParseError(FlixError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericFailure(FlixError):
    def __init__(self, message, iterations=None):
        self.iterations = iterations
        super().__init__(message)


class ConvergenceFailure(FlixError):
    def __init__(self, message, grad_norm=None, iterations=None):
        self.grad_norm = grad_norm
        self.iterations = iterations
        super().__init__(message)


class Diverged(FlixError):
    def __init__(self, message, round_index=None):
        self.round_index = round_index
        super().__init__(message)


class InternalConsistencyError(FlixError):
    pass
