"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
these rather than bare ValueError/RuntimeError for user-facing failures.
"""


class InvalidInputError(ValueError):
    """Malformed user data: empty datasets, shape mismatches, non-numeric cells."""


class InvalidConfigError(ValueError):
    """Inconsistent hyperparameters, e.g. an MCP concavity gamma <= 1."""


class ParseError(ValueError):
    """A serialized model document violates its schema."""


class BudgetInfeasibleError(RuntimeError):
    """No model on the regularization path satisfies the requested rule budget."""


class NumericError(ArithmeticError):
    """A solve produced non-finite values (typically inf/NaN in the inputs)."""
