"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: bad or malformed inputs exit with 3,
numerical and domain failures exit with 4, argparse usage errors exit with 2.
"""


class ReadoutError(Exception):
    """Base class for all package errors."""


class InputError(ReadoutError):
    """An argument violates a documented precondition."""


class SchemaError(InputError):
    """A file or config does not match its documented schema."""


class DomainError(ReadoutError):
    """A quantity left the domain where the requested output is defined."""


class NumericalError(ReadoutError):
    """A numerical routine failed to produce a usable result."""
