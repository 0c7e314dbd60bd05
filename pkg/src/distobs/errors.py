"""Exception types, each mapped to a process exit code by the CLI."""


class ValidationError(ValueError):
    """Malformed input: bad files, dimension mismatches, violated preconditions."""

    exit_code = 2


class SynthesisError(RuntimeError):
    """A design stage ran out of candidates (seeds, sweep ladder, solver starts)."""

    exit_code = 3


class NumericalError(RuntimeError):
    """A numerical routine produced a result that cannot be trusted."""

    exit_code = 4
