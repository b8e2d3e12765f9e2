"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when user-supplied data or configuration violates a contract.

    The CLI maps this to exit code 1; anything else that escapes is an
    internal error (exit code 2).
    """
