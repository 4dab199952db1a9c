class DslError(ValueError):
    """Base class for errors raised by the heuristic language"""


class DslSyntaxError(DslError):
    """Exception raised when the source text is malformed"""

    def __init__(self, message: str, *, line: int, column: int) -> None:
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class ForbiddenConstructError(DslError):
    """Exception raised when the source uses a construct outside the whitelist"""


class SignatureMismatchError(DslError):
    """Exception raised when the parameters or return shape don't fit the signature"""


class EvaluationError(DslError):
    """Base class for errors raised while evaluating a program"""


class DomainError(EvaluationError):
    """Exception raised when an operation is undefined for its operands"""


class ShapeError(EvaluationError):
    """Exception raised when values have incompatible shapes"""


class BudgetExceededError(EvaluationError):
    """Exception raised when an evaluation exceeds its step budget"""
