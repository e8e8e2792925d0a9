"""Exception types shared across the engine.

Every validation or numerical failure raises a structured exception from
this module, so callers can tell bad market data from domain violations
and from solver failures without parsing message strings.
"""


class EngineError(Exception):
    """Base class for all engine errors."""


class MalformedRecordError(EngineError):
    """A record in a quote or config file could not be parsed."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class InvariantViolationError(EngineError):
    """A domain object failed one of its construction invariants."""


class UnknownKeyError(EngineError):
    """Configuration contains a key the engine does not recognise."""

    def __init__(self, key: str):
        super().__init__(f"unknown configuration key: {key!r}")
        self.key = key


class OutOfDomainError(EngineError):
    """A value lies outside the domain an operation supports."""

    def __init__(self, name: str, value=None, message: str = ""):
        detail = f"{name}={value!r} out of domain"
        if message:
            detail += f": {message}"
        super().__init__(detail)
        self.name = name
        self.value = value


class NoQuotesError(EngineError):
    """No quotes available for the requested instrument or tenor."""


class RootNotBracketedError(EngineError):
    """A bootstrap pillar discount could not be bracketed in (0, 10]."""

    def __init__(self, maturity: float):
        super().__init__(f"no discount root in (0, 10] for pillar T={maturity}")
        self.maturity = maturity


class InconsistentStripError(EngineError):
    """A solved forward violates the shifted-rate positivity bound k + F > 0."""


class InvalidIntervalError(EngineError):
    """Interval endpoints are reversed (t > u)."""


class NonPositiveDtError(EngineError):
    """A simulation step size must be strictly positive."""


class StaleStateError(EngineError):
    """The Markov state lies past the reset time of the requested rate."""


class EmptyGridError(EngineError):
    """A simulation grid must contain at least the origin."""


class ScheduleBeyondCurveError(EngineError):
    """A deal pays beyond the last curve pillar."""


class GridTooCoarseError(EngineError):
    """A deal or policy date does not lie on the simulation grid."""


class NoConvergenceError(EngineError):
    """A fixed-point iteration failed to converge."""

    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"no convergence after {iterations} iterations (residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class ZeroValueError(EngineError):
    """A haircut requires a non-zero current value."""


class EmptySamplesError(EngineError):
    """An empirical distribution must contain at least one sample."""


class ZeroForwardError(EngineError):
    """The convexity adjustment divides by the forward, which is zero."""


class AlphaOutOfRangeError(EngineError):
    """Collateral fraction outside its admissible range."""


class UsageError(EngineError):
    """Bad command line or bad input files (CLI exit code 2)."""


class ComputationError(EngineError):
    """A computation failed after valid inputs (CLI exit code 1)."""
