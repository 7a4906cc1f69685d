"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GmnbError(Exception):
    code = "error"
    exit_code = 1


class ValidationError(GmnbError, ValueError):
    """Bad arguments, bad files, or mismatched inputs."""

    code = "validation"
    exit_code = 2


class DomainError(ValidationError):
    """A distribution parameter outside its support."""


class StructureError(ValidationError):
    """Shapes, gene sets or time grids that do not line up."""


class NumericError(GmnbError, ArithmeticError):
    """A sampler invariant was violated mid-run."""

    code = "numeric"
    exit_code = 3
