"""Continuation weights of the five agent types.

theta*(kappa) is the fixed point of theta -> D * Phi(kappa * theta) with
D = exp(-delta * tau).  The sophisticated agent's weight comes from a
second fixed point, xi in G(xi), where G(xi) = H(Theta(xi)) and
Theta(xi) = kappa(xi) * theta*(kappa(xi)).
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .envelope import theta_lower
from .errors import DomainError, InconsistentBranch, NonConvergent
from .market import ValidatedModel
from .one_period import PayoffLaw, digital_law, h_interval_at_corner, solve_dual

ZERO_SIGN_TOL = 1e-10
MAX_PICARD = 200


@dataclass(frozen=True)
class ThetaStarResult:
    kappa: float
    value: float
    iterations: int
    final_step: float
    method: str = "newton"
    steps: Tuple[float, ...] = ()
    h_value: float = 0.0

    @property
    def step_ratios(self) -> Tuple[float, ...]:
        s = self.steps
        return tuple(s[i + 1] / s[i] for i in range(len(s) - 1) if s[i] > 0)


class Branch(str, enum.Enum):
    UNIQUE_NEG = "Unique_NegA"
    UNIQUE_ZERO = "Unique_ZeroA"
    SCAN_POS = "Scan_PosA"
    CORNER_DIGITAL = "Corner_Digital"


@dataclass(frozen=True)
class GValue:
    """Value of the set-valued map at one xi: a point, or [0, upper]."""

    xi: float
    kappa: float
    theta_eff: float
    lower: float
    upper: float

    @property
    def is_interval(self) -> bool:
        return self.upper > self.lower

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= x <= self.upper + tol


@dataclass(frozen=True)
class GFixedPointResult:
    xi_hat: float
    branch: Branch
    residual: float
    theta_eff: float
    kappa_hat: float
    crossings: int = 1
    fixed_points: Tuple[float, ...] = ()
    evaluations: int = 0


@dataclass(frozen=True)
class AgentConstants:
    a_my: float
    a_exp: float
    a_pre: float
    a_so: float
    beta_hat: Optional[float]
    xi_hat: float
    xi_lower: Optional[float]
    h_lower_bar: Optional[float]
    corner_mix: Optional[PayoffLaw] = None
    branch: Branch = Branch.UNIQUE_ZERO
    diagnostics: Dict[str, float] = field(default_factory=dict)


def theta_star(
    kappa: float,
    model: ValidatedModel,
    guess: Optional[float] = None,
    method: str = "newton",
) -> ThetaStarResult:
    """Fixed point of theta -> D * Phi(kappa * theta).

    ``method="picard"`` runs the plain contraction iteration.  The default
    ``"newton"`` uses that Phi is convex with slope H, so the residual
    theta - D*Phi(kappa*theta) is concave and increasing; Newton steps then
    converge monotonically from the left after the first step.
    """
    # the map contracts whenever kappa * D * e^(h tau) < 1, which covers [0, 1]
    if not (kappa >= 0.0 and kappa * model.contraction_modulus < 1.0):
        raise DomainError(f"kappa={kappa} outside the contraction range")
    D = model.discount
    if guess is None:
        guess = D * solve_dual(0.0, model).phi_value
    theta = float(guess)
    tol = model.tol.fixed_point
    steps: List[float] = []
    if method == "picard":
        for it in range(1, MAX_PICARD + 1):
            sol = solve_dual(kappa * theta, model)
            nxt = D * sol.phi_value
            step = abs(nxt - theta)
            steps.append(step)
            theta = nxt
            if step <= tol:
                return ThetaStarResult(kappa, theta, it, step, method, tuple(steps),
                                       solve_dual(kappa * theta, model).h_value)
        raise NonConvergent(f"contraction iteration for kappa={kappa} exceeded {MAX_PICARD} steps")
    if method != "newton":
        raise DomainError(f"unknown method {method!r}")
    for it in range(1, 61):
        sol = solve_dual(kappa * theta, model)
        resid = theta - D * sol.phi_value
        slope = 1.0 - kappa * D * sol.h_value
        nxt = theta - resid / slope
        step = abs(nxt - theta)
        steps.append(step)
        theta = nxt
        if step <= 1e-3 * tol or step <= 4e-16 * abs(theta):
            final = solve_dual(kappa * theta, model)
            return ThetaStarResult(kappa, theta, it, step, method, tuple(steps), final.h_value)
    return theta_star(kappa, model, theta, "picard")


def kappa_of_xi(xi: float, model: ValidatedModel) -> float:
    b = model.pref.beta
    return b / (1.0 - (1.0 - b) * model.discount * xi)


def xi_of_kappa(kappa: float, model: ValidatedModel) -> float:
    b = model.pref.beta
    return (1.0 - b / kappa) / ((1.0 - b) * model.discount)


def xi_lower(model: ValidatedModel) -> float:
    """xi above which Theta(xi) falls below the lower threshold (closed form)."""
    p = model.pref
    if p.beta == 1.0:
        raise DomainError("xi_lower is undefined for beta = 1")
    D = model.discount
    a = p.alpha
    num = 1.0 - p.beta * p.gamma**a * D / (1.0 + p.k ** (-1.0 / (1.0 - a))) ** (1.0 - a)
    return num / ((1.0 - p.beta) * D)


def effective_weight(xi: float, model: ValidatedModel, guess: Optional[float] = None) -> float:
    """Theta(xi) = kappa(xi) * theta*(kappa(xi)), wherever theta* is defined."""
    kappa = kappa_of_xi(xi, model)
    return kappa * theta_star(kappa, model, guess).value


def g_map(xi: float, model: ValidatedModel, guess: Optional[float] = None) -> GValue:
    """G(xi) as a point or, where Theta(xi) hits the lower threshold, an interval."""
    if not -1e-15 <= xi <= model.e_h_tau * (1 + 1e-12):
        raise DomainError(f"xi must lie in [0, e^(h tau)], got {xi}")
    kappa = kappa_of_xi(xi, model)
    ts = theta_star(kappa, model, guess)
    theta_eff = kappa * ts.value
    tl = theta_lower(model.pref)
    if abs(theta_eff - tl) <= 1e-12 * abs(tl):
        upper = h_interval_at_corner(model).h_upper
        return GValue(xi, kappa, theta_eff, 0.0, upper)
    h = solve_dual(theta_eff, model).h_value
    return GValue(xi, kappa, theta_eff, h, h)


def _sophisticated_residual(t: float, model: ValidatedModel):
    """(xi(t), H(t) - xi(t)) with t the effective weight Theta.

    From Theta = kappa * D * Phi(Theta) the xi producing a given t is
    explicit, so no inner fixed point is needed.
    """
    sol = solve_dual(t, model)
    b, D = model.pref.beta, model.discount
    kappa = t / (D * sol.phi_value)
    xi = (1.0 - b / kappa) / ((1.0 - b) * D)
    return xi, sol.h_value - xi


def _scan_effective_weight(model: ValidatedModel, t_lo: float, t_hi: float, n: int):
    """Sign changes of H(t) - xi(t) on a uniform t grid, refined by Brent."""
    grid = np.linspace(t_lo, t_hi, n)
    res = np.array([_sophisticated_residual(t, model)[1] for t in grid])
    roots: List[float] = []
    for i in range(n - 1):
        if res[i] == 0:
            roots.append(grid[i])
        elif res[i] * res[i + 1] < 0:
            roots.append(brentq(lambda t: _sophisticated_residual(t, model)[1],
                                grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15))
    if res[-1] == 0:
        roots.append(grid[-1])
    return roots, n


def solve_g_fixed_point(
    model: ValidatedModel,
    method: Optional[str] = None,
    scan_points: int = 512,
    guess: Optional[float] = None,
) -> GFixedPointResult:
    """Fixed point xi in G(xi) for the sophisticated agent.

    ``method`` is ``"bisect"`` (default when a_my < 0) or ``"scan"``
    (default, and the only option, when a_my > 0).  ``guess`` seeds the
    inner theta* iterations.
    """
    p = model.pref
    b, D = p.beta, model.discount
    a_my = D * solve_dual(0.0, model).phi_value
    tl = theta_lower(p)
    ehT = model.e_h_tau

    def certify(xi: float, branch: Branch, evals: int, fixed=()) -> GFixedPointResult:
        gv = g_map(xi, model, guess)
        if gv.is_interval:
            resid = 0.0 if gv.contains(xi) else min(abs(xi - gv.lower), abs(xi - gv.upper))
        else:
            resid = abs(gv.upper - xi)
        return GFixedPointResult(xi, branch, resid, gv.theta_eff, gv.kappa,
                                 max(1, len(fixed)), tuple(fixed) or (xi,), evals)

    if a_my != 0 and abs(a_my) <= ZERO_SIGN_TOL:
        warnings.warn(f"a_my={a_my:.3e} treated as zero", InconsistentBranch)
        a_my = 0.0
    if a_my == 0.0 or b == 0.0:
        xi = solve_dual(0.0, model).h_value
        return certify(xi, Branch.UNIQUE_ZERO if a_my == 0 else
                       (Branch.SCAN_POS if a_my > 0 else Branch.UNIQUE_NEG), 1)
    if b == 1.0:
        ts = theta_star(1.0, model, guess)
        if ts.value <= tl:
            return certify(0.0, Branch.UNIQUE_NEG, 1)
        xi = solve_dual(ts.value, model).h_value
        return certify(xi, Branch.SCAN_POS if a_my > 0 else Branch.UNIQUE_NEG, 1)

    if a_my > 0:
        if method not in (None, "scan"):
            raise DomainError("only the scan method applies when a_my > 0")
        t_lo = g_map(0.0, model, guess).theta_eff
        t_hi = g_map(ehT, model, guess).theta_eff
        roots, evals = _scan_effective_weight(model, t_lo, t_hi, scan_points)
        if not roots:
            raise NonConvergent("no fixed point of G detected by the scan")
        xis = sorted(solve_dual(t, model).h_value for t in roots)
        return certify(xis[0], Branch.SCAN_POS, evals, xis)

    # a_my < 0: G is non-increasing, so g(xi) - xi has a single sign change
    method = method or "bisect"
    xl = xi_lower(model)
    hub = h_interval_at_corner(model).h_upper
    if xl <= 0:
        return certify(0.0, Branch.UNIQUE_NEG if xl < 0 else Branch.CORNER_DIGITAL, 1)
    if xl <= ehT and hub >= xl:
        return certify(xl, Branch.CORNER_DIGITAL, 1)
    hi = min(xl, ehT)
    if method == "scan":
        t_lo = g_map(0.0, model, guess).theta_eff
        t_hi = tl * (1 + 1e-15) if xl <= ehT else g_map(ehT, model, guess).theta_eff
        roots, evals = _scan_effective_weight(model, t_hi, t_lo, scan_points)
        if not roots:
            raise NonConvergent("no fixed point of G detected by the scan")
        return certify(solve_dual(roots[0], model).h_value, Branch.UNIQUE_NEG, evals, [])
    if method != "bisect":
        raise DomainError(f"unknown method {method!r}")
    last = [guess]
    count = [0]

    def d(xi):
        count[0] += 1
        if xi >= xl:
            return hub - xi
        gv = g_map(xi, model, last[0])
        last[0] = gv.theta_eff / gv.kappa
        return gv.upper - xi

    lo = 0.0
    d_lo, d_hi = d(lo), d(hi)
    if d_hi >= 0:
        return certify(hi, Branch.UNIQUE_NEG, count[0])
    while hi - lo > 1e-13 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if d(mid) > 0:
            lo = mid
        else:
            hi = mid
    return certify(0.5 * (lo + hi), Branch.UNIQUE_NEG, count[0])


def agent_constants(
    model: ValidatedModel,
    method: Optional[str] = None,
    scan_points: int = 512,
) -> AgentConstants:
    p = model.pref
    D = model.discount
    a_my = theta_star(0.0, model).value
    a_exp = theta_star(1.0, model).value
    a_pre = D * solve_dual(p.beta * a_exp, model).phi_value
    fp = solve_g_fixed_point(model, method, scan_points)
    corner = None
    if fp.branch is Branch.CORNER_DIGITAL:
        corner = digital_law(fp.xi_hat, model)
    a_so = fp.theta_eff
    xl = None
    if p.beta < 1.0 and a_my < 0:
        xl = xi_lower(model)
    hub = None
    m = model.market
    if p.k > 0 and p.gamma > math.exp(m.r * m.tau):
        hub = h_interval_at_corner(model).h_upper
    return AgentConstants(
        a_my=a_my,
        a_exp=a_exp,
        a_pre=a_pre,
        a_so=a_so,
        beta_hat=a_so / a_exp if a_exp != 0 else None,
        xi_hat=fp.xi_hat,
        xi_lower=xl,
        h_lower_bar=hub,
        corner_mix=corner,
        branch=fp.branch,
        diagnostics={"g_residual": fp.residual, "crossings": float(fp.crossings),
                     "g_evaluations": float(fp.evaluations)},
    )
