"""Exception types shared across the package."""


class GolpError(Exception):
    """Base class for errors raised by this package."""


class CapacityError(GolpError):
    """An allocation would exceed the configured memory budget."""


class CalibrationError(GolpError):
    """A model fit was requested on degenerate or insufficient data."""


class NoCrossingError(GolpError):
    """Host and device cost curves do not cross on the searched range."""


class SweepBracketError(GolpError):
    """A measured sweep does not bracket a host/device crossover."""


class StrategyMismatchError(GolpError):
    """Two dispatch strategies returned different results for the same query."""
