"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or inconsistent user input (bad file, bad shape, bad value)."""


class SolverError(RuntimeError):
    """Numerical failure inside a solver (should not happen on sane inputs)."""
