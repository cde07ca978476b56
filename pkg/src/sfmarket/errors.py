"""Exception types shared across the package."""


class MarketError(Exception):
    """Base class for all errors raised by sfmarket."""


class InputError(MarketError, ValueError):
    """Malformed input: shapes, ranges, schema violations."""


class InfeasibleError(MarketError):
    """The dispatch problem admits no feasible point."""


class RegimeError(MarketError):
    """Inputs fall outside the regime in which an operation is defined.

    Raised for pivotal suppliers, the two-node analytic regime, and the
    unbounded price-of-anarchy construction.
    """
