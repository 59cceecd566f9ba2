"""Exception types shared across the package.

Each class marks one failure surface: bad geometry, points outside the
domain, iterations that did not converge, malformed configuration, and
estimator misuse.  The command line maps them to distinct exit codes.
"""

from __future__ import annotations


class RbmError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(RbmError):
    """The cone data is structurally unusable (wrong shapes, singular
    normal matrix where an inverse is required, non-transversal
    reflection directions, weight vector not positive)."""


class DomainError(RbmError):
    """A point that should lie in the cone (or in the constraint
    subspace attached to it) does not."""


class ConvergenceError(RbmError):
    """An iterative routine ran out of iterations.

    Carries the last iterate and residual so a caller can log a useful
    diagnostic instead of a bare failure.
    """

    def __init__(self, message: str, *, iterations: int | None = None,
                 residual: float | None = None, last=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.last = last

    def __str__(self) -> str:
        extra = []
        if self.iterations is not None:
            extra.append(f"iterations={self.iterations}")
        if self.residual is not None:
            extra.append(f"residual={self.residual:.3e}")
        base = super().__str__()
        return f"{base} ({', '.join(extra)})" if extra else base


class ConfigError(RbmError):
    """A scenario configuration failed to parse or validate.

    ``problems`` lists every offending field with its line number, so
    one run reports all mistakes instead of the first.
    """

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class EstimationError(RbmError):
    """An estimator was called with unusable inputs (too little data
    for an error bar, mismatched random number streams for a paired
    comparison, and similar contract breaks)."""
