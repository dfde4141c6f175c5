"""Exception types shared across the toolkit.

The CLI maps these onto distinct exit codes, so modules should raise the
most specific type that applies instead of bare ValueError/RuntimeError.
"""


class ContractError(ValueError):
    """A precondition or invariant was violated by the caller."""


class FormatError(ValueError):
    """A file or stream does not conform to its declared format."""
