"""Strategy plans for the five agent types, residual checks, simulation and
within-period investment curves.

Every agent's gross return in a period is y(Z; theta) for the period's
kernel ratio Z; the agents differ only in which theta they use and when.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateWealth, DomainError, ToleranceViolation
from .fixed_point import AgentConstants, Branch
from .market import KernelLaw, ValidatedModel, expect, kernel_law
from .one_period import (
    PayoffKind,
    PayoffLaw,
    law_moments,
    payoff_eval,
    resolve_uncached,
    solve_dual,
)

CHECK_THRESHOLD = 1e-8
BLOCK_PATHS = 4096
TERMINAL_QUANTILES = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)


class AgentType(str, enum.Enum):
    PRE_COMMITTING = "PreCommitting"
    NAIVE = "Naive"
    SOPHISTICATED = "Sophisticated"
    EXPONENTIAL = "Exponential"
    MYOPIC = "Myopic"


@dataclass(frozen=True)
class StrategyPlan:
    """First-period law and the law used in every later period."""

    agent: AgentType
    first_period_law: PayoffLaw
    steady_law: PayoffLaw
    constants: AgentConstants


@dataclass(frozen=True)
class ValueReport:
    agent: AgentType
    residuals: Dict[str, float]
    threshold: float = CHECK_THRESHOLD

    @property
    def passed(self) -> bool:
        return all(v <= self.threshold for v in self.residuals.values())

    @property
    def worst(self) -> Tuple[str, float]:
        name = max(self.residuals, key=self.residuals.get)
        return name, self.residuals[name]


@dataclass(frozen=True)
class WealthPathStats:
    paths: int
    periods: int
    seed: int
    return_mean: Tuple[float, ...]
    return_std: Tuple[float, ...]
    bankruptcy_frequency: float
    ruin_rate: float
    ruin_rate_se: float
    terminal_quantiles: Dict[float, float]
    terminal_wealth: np.ndarray = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class CurvePoint:
    t_frac: float
    log_return: float
    fraction_invested: float
    wealth_ratio: float


def _law_at(theta: float, model: ValidatedModel) -> PayoffLaw:
    return solve_dual(theta, model).law


def strategy_plan(agent: AgentType, constants: AgentConstants, model: ValidatedModel) -> StrategyPlan:
    """Laws each agent type applies in the first and in later periods."""
    agent = AgentType(agent)
    c = constants
    b = model.pref.beta
    if agent is AgentType.PRE_COMMITTING:
        first, steady = _law_at(b * c.a_exp, model), _law_at(c.a_exp, model)
    elif agent is AgentType.NAIVE:
        first = steady = _law_at(b * c.a_exp, model)
    elif agent is AgentType.SOPHISTICATED:
        if c.branch is Branch.CORNER_DIGITAL and c.corner_mix is not None:
            first = steady = c.corner_mix
        else:
            first = steady = _law_at(c.a_so, model)
    elif agent is AgentType.EXPONENTIAL:
        first = steady = _law_at(c.a_exp, model)
    else:
        first = steady = _law_at(0.0, model)
    return StrategyPlan(agent, first, steady, c)


def _moments(law: PayoffLaw, model: ValidatedModel):
    """(budget, E[F(Y; law theta)], E[Y^alpha])."""
    budget, ef, ya, _ = law_moments(law, model)
    return float(budget), float(ef), float(ya)


def _optimality(law: PayoffLaw, model: ValidatedModel, name: str, out: Dict[str, float]) -> float:
    """Record budget and supremum residuals of ``law``; return E[F]."""
    budget, ef, _, fbar = (float(v) for v in law_moments(law, model))
    # the budget binds except for constant, zero and corner digital payoffs
    binding = law.kind in (PayoffKind.TWO_BRANCH, PayoffKind.GAIN_ONLY)
    out[f"{name}: budget"] = abs(budget - 1.0) if binding else max(0.0, budget - 1.0)
    # fresh solve, bypassing the cache, so the comparison is not a tautology
    fresh = resolve_uncached(law.theta, model).phi_value
    sup = abs(fresh - ef)
    if law.lambda_star is not None:
        # weak duality: lam + E[Fbar(Y) - lam Z Y] bounds every feasible value
        upper = law.lambda_star * (1.0 - budget) + fbar
        sup = max(sup, upper - ef)
    out[f"{name}: supremum"] = sup
    return ef


def value_check(plan: StrategyPlan, model: ValidatedModel, raise_on_fail: bool = True) -> ValueReport:
    """Re-evaluate the defining equations of the plan's value constants.

    Raises:
        ToleranceViolation: a residual exceeds 1e-8; the message names it.
    """
    c = plan.constants
    D = model.discount
    b = model.pref.beta
    res: Dict[str, float] = {}
    agent = plan.agent
    if agent is AgentType.EXPONENTIAL:
        ef = _optimality(plan.steady_law, model, "exponential", res)
        res["exponential: A_exp = D E[F(Y; A_exp)]"] = abs(c.a_exp - D * ef)
    elif agent is AgentType.MYOPIC:
        ef = _optimality(plan.steady_law, model, "myopic", res)
        res["myopic: A_my = D E[U(Y - gamma)]"] = abs(c.a_my - D * ef)
    elif agent is AgentType.PRE_COMMITTING:
        ef1 = _optimality(plan.first_period_law, model, "pre-commitment first", res)
        ef = _optimality(plan.steady_law, model, "pre-commitment steady", res)
        res["pre-commitment: A_pre = D E[F(Y1; beta A_exp)]"] = abs(c.a_pre - D * ef1)
        res["pre-commitment: A_exp = D E[F(Y; A_exp)]"] = abs(c.a_exp - D * ef)
        res["pre-commitment: first weight"] = abs(plan.first_period_law.theta - b * c.a_exp)
    elif agent is AgentType.NAIVE:
        _optimality(plan.first_period_law, model, "naive", res)
        res["naive: weight"] = abs(plan.first_period_law.theta - b * c.a_exp)
    else:
        law = plan.steady_law
        ef = _optimality(law, model, "sophisticated", res)
        _, _, ya = _moments(law, model)
        kappa = b / (1.0 - (1.0 - b) * D * ya)
        # A_hat is the value coefficient; the plan's weight is kappa * A_hat
        a_hat = D * ef
        res["sophisticated: A_so = kappa(E[Y^alpha]) A_hat"] = abs(c.a_so - kappa * a_hat)
        res["sophisticated: E[Y^alpha] = xi_hat"] = abs(ya - c.xi_hat)
        res["sophisticated: weight"] = abs(law.theta - c.a_so)
    report = ValueReport(agent, res)
    if raise_on_fail and not report.passed:
        name, val = report.worst
        raise ToleranceViolation(f"{name} residual {val:.3e} exceeds {CHECK_THRESHOLD:g}")
    return report


def _block_returns(laws: Sequence[PayoffLaw], kernel: KernelLaw, seed: int, block: int,
                   n: int) -> np.ndarray:
    """Gross returns of one block of paths, shape (periods, n)."""
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    rng = np.random.Generator(np.random.Philox(ss))
    normals = rng.standard_normal((len(laws), n))
    out = np.empty_like(normals)
    for i, law in enumerate(laws):
        out[i] = payoff_eval(law, kernel.sample(normals[i]))
    return out


def simulate_wealth(
    plan: StrategyPlan,
    x0: float,
    periods: int,
    paths: int,
    seed: int,
    model: ValidatedModel,
    jobs: int = 1,
) -> WealthPathStats:
    """Monte-Carlo wealth paths under the plan's period laws.

    Paths are cut into fixed blocks of BLOCK_PATHS, each with its own
    counter-based stream keyed by (seed, block), so the output does not
    depend on ``jobs``.
    """
    if not (x0 >= 0 and math.isfinite(x0)):
        raise DomainError(f"x0 must be finite and non-negative, got {x0}")
    if periods < 1 or paths < 1:
        raise DomainError("periods and paths must be at least 1")
    kernel = kernel_law(model, model.market.tau)
    laws = [plan.first_period_law] + [plan.steady_law] * (periods - 1)
    sizes = [min(BLOCK_PATHS, paths - s) for s in range(0, paths, BLOCK_PATHS)]

    def run(i):
        return _block_returns(laws, kernel, seed, i, sizes[i])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            blocks = list(pool.map(run, range(len(sizes))))
    else:
        blocks = [run(i) for i in range(len(sizes))]
    y = np.concatenate(blocks, axis=1)

    growth = np.cumprod(y, axis=0)
    alive_before = np.vstack([np.ones((1, paths), dtype=bool), growth[:-1] > 0])
    ruined_now = alive_before & (y == 0)
    exposure = int(alive_before.sum())
    rate = float(ruined_now.sum()) / exposure if exposure else 0.0
    se = math.sqrt(rate * (1.0 - rate) / exposure) if exposure else 0.0
    terminal = x0 * growth[-1]
    bankrupt = float(np.mean(growth[-1] == 0))
    qs = np.quantile(terminal, TERMINAL_QUANTILES)
    return WealthPathStats(
        paths=paths,
        periods=periods,
        seed=seed,
        return_mean=tuple(float(v) for v in y.mean(axis=1)),
        return_std=tuple(float(v) for v in y.std(axis=1, ddof=1)) if paths > 1
        else tuple(0.0 for _ in range(periods)),
        bankruptcy_frequency=bankrupt,
        ruin_rate=rate,
        ruin_rate_se=se,
        terminal_quantiles={q: float(v) for q, v in zip(TERMINAL_QUANTILES, qs)},
        terminal_wealth=terminal,
    )


def log_return_to_kernel(s, t_frac: float, model: ValidatedModel):
    """Kernel state at t_frac of the period given the running stock log-return."""
    m = model.market
    t = t_frac * m.tau
    ratio = model.phi / m.sigma
    return np.exp(-ratio * (np.asarray(s, dtype=float) - (m.mu - 0.5 * m.sigma**2) * t)
                  - (m.r + 0.5 * model.phi**2) * t)


def _wealth_and_delta(law: PayoffLaw, z: np.ndarray, rest: KernelLaw, tol: float):
    """(v(z), z v'(z)) with v(z) = E[W y(zW)] over the remaining horizon.

    z v'(z) = E[W y(zW) (omega/s - 1)] with omega the standardized log W;
    this comes from differentiating the lognormal density, not the payoff.
    """
    s = rest.log_sd
    v = np.empty(z.size)
    dv = np.empty(z.size)
    for i, zi in enumerate(z):
        def integrand(w, zi=zi):
            wy = w * payoff_eval(law, zi * w)
            om = rest.standardize(w)
            return np.stack([wy, wy * (om / s - 1.0)])

        bps = [t / zi for t in law.threshold_z]
        v[i], dv[i] = expect(rest, integrand, bps, tol)
    return v, dv


def wealth_ratio(law: PayoffLaw, z, t_frac: float, model: ValidatedModel) -> np.ndarray:
    """Portfolio value at kernel state z, per unit of period-start wealth."""
    rest = kernel_law(model, (1.0 - t_frac) * model.market.tau)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return _wealth_and_delta(law, z, rest, model.tol.quad)[0]


def investment_level(
    law: PayoffLaw,
    t_frac: float,
    log_return_grid: Sequence[float],
    model: ValidatedModel,
) -> List[CurvePoint]:
    """Fraction of wealth in the stock along a grid of running log-returns.

    Raises:
        DegenerateWealth: replicated wealth is not positive at a grid point.
    """
    if not 0.0 <= t_frac < 1.0:
        raise DomainError(f"t_frac must lie in [0, 1), got {t_frac}")
    if law.kind is PayoffKind.ZERO:
        raise DomainError("the zero payoff has no wealth to invest")
    grid = np.asarray(list(log_return_grid), dtype=float)
    m = model.market
    rest_tau = (1.0 - t_frac) * m.tau
    if law.kind is PayoffKind.CONSTANT_CAP:
        v = law.cap * math.exp(-m.r * rest_tau)
        return [CurvePoint(t_frac, float(s), 0.0, v) for s in grid]
    rest = kernel_law(model, rest_tau)
    z = log_return_to_kernel(grid, t_frac, model)
    v, zdv = _wealth_and_delta(law, z, rest, model.tol.quad)
    bad = ~(v > 0)
    if bad.any():
        i = int(np.argmax(bad))
        raise DegenerateWealth(f"replicated wealth {v[i]:.3e} at log-return {grid[i]}")
    frac = -(model.phi / m.sigma) * zdv / v
    return [CurvePoint(t_frac, float(s), float(p), float(vi)) for s, p, vi in zip(grid, frac, v)]


def bump_fraction(law: PayoffLaw, t_frac: float, log_return_grid: Sequence[float],
                  model: ValidatedModel, rel_step: float = 1e-5) -> np.ndarray:
    """Fraction invested from a central difference of v in z (cross-check)."""
    grid = np.asarray(list(log_return_grid), dtype=float)
    z = log_return_to_kernel(grid, t_frac, model)
    up = wealth_ratio(law, z * (1 + rel_step), t_frac, model)
    dn = wealth_ratio(law, z * (1 - rel_step), t_frac, model)
    mid = wealth_ratio(law, z, t_frac, model)
    zdv = (up - dn) / (2 * rel_step)
    return -(model.phi / model.market.sigma) * zdv / mid


def default_log_return_grid(n: int = 201, half_width: float = 0.3) -> np.ndarray:
    return np.linspace(-half_width, half_width, n)


def emit_figure_data(
    agents: Sequence[AgentType],
    t_frac: float,
    grid: Sequence[float],
    model: ValidatedModel,
    constants: Optional[AgentConstants] = None,
) -> List[Tuple[str, float, float]]:
    """Rows (agent, log_return, fraction_invested), plus a Merton reference curve.

    Each agent uses the law of the current (first) period; the
    pre-committing agent therefore coincides with the naive one.
    """
    from .fixed_point import agent_constants

    constants = constants or agent_constants(model)
    grid = [float(s) for s in grid]
    rows: List[Tuple[str, float, float]] = []
    for agent in agents:
        plan = strategy_plan(AgentType(agent), constants, model)
        pts = investment_level(plan.first_period_law, t_frac, grid, model)
        rows.extend((plan.agent.value, p.log_return, p.fraction_invested) for p in pts)
    rows.extend(("Merton", s, model.merton_ratio) for s in grid)
    return rows
