class GraspForgeError(ValueError):
    """Invalid user input: bad files, inconsistent dimensions, broken configs.

    The CLI maps this to exit code 1.
    """


class InvariantViolation(RuntimeError):
    """An internal consistency check failed (CLI exit code 2)."""
