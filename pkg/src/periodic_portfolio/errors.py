"""Exception hierarchy shared by all solver modules."""


class PortfolioError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PortfolioError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class DegenerateMarket(DomainError):
    """The market has a zero Sharpe ratio, so the stock carries no premium."""


class IllPosed(DomainError):
    """The discount rate does not dominate the Merton growth exponent."""


class NonConvergent(PortfolioError, RuntimeError):
    """An iterative routine failed to reach its tolerance."""


class ToleranceViolation(PortfolioError, RuntimeError):
    """A post-solve residual check exceeded its threshold."""


class CornerCase(PortfolioError):
    """The requested quantity is set-valued at this argument."""


class InconsistentBranch(UserWarning):
    """A sign-based branch decision was made on a numerically zero value."""


class DegenerateWealth(PortfolioError, RuntimeError):
    """Replicated wealth came out non-positive where it must be positive."""
