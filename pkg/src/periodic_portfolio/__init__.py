"""Periodic portfolio choice with S-shaped utility and present bias.

The public surface re-exports the main entry points of each module.
"""

from .agents import (
    AgentType,
    CurvePoint,
    StrategyPlan,
    ValueReport,
    WealthPathStats,
    emit_figure_data,
    investment_level,
    simulate_wealth,
    strategy_plan,
    value_check,
)
from .envelope import EnvelopeGeometry, envelope_geometry, theta_lower
from .errors import (
    CornerCase,
    DegenerateMarket,
    DegenerateWealth,
    DomainError,
    IllPosed,
    InconsistentBranch,
    NonConvergent,
    PortfolioError,
    ToleranceViolation,
)
from .fixed_point import AgentConstants, Branch, agent_constants, g_map, solve_g_fixed_point, theta_star
from .market import KernelLaw, MarketParams, PreferenceParams, Tolerances, ValidatedModel, expect, kernel_law, validate
from .one_period import PayoffKind, PayoffLaw, oracle_discrete, phi, solve_dual

__version__ = "0.1.0"
