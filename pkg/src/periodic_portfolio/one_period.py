"""One-period problem: maximize E[F(Y; theta)] subject to E[Z Y] <= 1.

The optimizer is obtained by duality against the concave majorant: for a
multiplier lam the pointwise maximizer of Fbar(y) - lam*z*y is read off the
envelope geometry, and lam is fixed by making the budget bind.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtri

from .envelope import (
    CaseTag,
    EnvelopeGeometry,
    envelope_eval,
    envelope_geometry,
    f_eval,
    inv_marginal_gain,
    inv_marginal_loss,
    theta_lower,
)
from .errors import CornerCase, DomainError, NonConvergent, ToleranceViolation
from .market import KernelLaw, PreferenceParams, ValidatedModel, expect, kernel_law


class PayoffKind(str, enum.Enum):
    TWO_BRANCH = "TwoBranch"
    GAIN_ONLY = "GainOnly"
    ZERO = "Zero"
    CONSTANT_CAP = "ConstantCap"
    DIGITAL = "Digital"


@dataclass(frozen=True)
class PayoffLaw:
    """Optimal gross return as a function of the period's kernel ratio.

    ``threshold_z`` holds the kernel values where the payoff jumps; pass
    them as quadrature breakpoints.  ``corner`` marks theta equal to the
    lower threshold, where the optimizer is a whole family of digital
    payoffs and this law is only one representative.
    """

    theta: float
    kind: PayoffKind
    pref: PreferenceParams
    geometry: Optional[EnvelopeGeometry] = None
    lambda_star: Optional[float] = None
    threshold_z: Tuple[float, ...] = ()
    digital_payout: Optional[float] = None
    digital_threshold_eta: Optional[float] = None
    cap: Optional[float] = None
    corner: bool = False


@dataclass(frozen=True)
class OnePeriodSolution:
    law: PayoffLaw
    phi_value: float
    h_value: float
    diagnostics: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class CornerInterval:
    """Moment range [0, h_upper] of the optimizer family at the corner."""

    h_upper: float
    eta_star: float
    payout: float


def _y_of_q(q: np.ndarray, kind: PayoffKind, geom: EnvelopeGeometry, pref: PreferenceParams):
    """Pointwise maximizer of Fbar(y) - q*y, for q = lam*z."""
    y = np.zeros_like(q)
    th = geom.theta
    if kind is PayoffKind.TWO_BRANCH:
        gain = q <= geom.m1
        if gain.any():
            y[gain] = inv_marginal_gain(q[gain], th, pref)
        if (~gain).any():
            y[~gain] = inv_marginal_loss(q[~gain], th, pref)
    else:
        gain = q <= geom.m2
        if gain.any():
            y[gain] = inv_marginal_gain(q[gain], th, pref)
    return y


def payoff_eval(law: PayoffLaw, z):
    """y(z) for kernel values z > 0."""
    z = np.asarray(z, dtype=float)
    flat = z.ravel()
    kind = law.kind
    if kind is PayoffKind.ZERO:
        out = np.zeros_like(flat)
    elif kind is PayoffKind.CONSTANT_CAP:
        out = np.full_like(flat, law.cap)
    elif kind is PayoffKind.DIGITAL:
        out = np.where(flat <= law.digital_threshold_eta, law.digital_payout, 0.0)
    else:
        out = _y_of_q(law.lambda_star * flat, kind, law.geometry, law.pref)
    out = out.reshape(z.shape)
    return float(out) if out.ndim == 0 else out


def law_moments(law: PayoffLaw, model: ValidatedModel, kernel: Optional[KernelLaw] = None):
    """(budget E[ZY], E[F(Y)], E[Y^alpha], E[Fbar(Y)]) by quadrature."""
    kernel = kernel or kernel_law(model, model.market.tau)
    pref, th = law.pref, law.theta
    geom = law.geometry or envelope_geometry(th, pref, model.tol.root)

    def integrand(z):
        y = payoff_eval(law, z)
        return np.stack([
            z * y,
            f_eval(y, th, pref),
            y**pref.alpha,
            envelope_eval(y, geom, pref),
        ])

    return expect(kernel, integrand, law.threshold_z, model.tol.quad)


def _budget(lam: float, kind, geom, pref, kernel: KernelLaw, tol: float) -> float:
    m = geom.m1 if kind is PayoffKind.TWO_BRANCH else geom.m2
    return expect(
        kernel,
        lambda z: z * _y_of_q(lam * z, kind, geom, pref),
        (m / lam,),
        tol,
    )


def _solve_multiplier(kind, geom, pref, kernel: KernelLaw, model: ValidatedModel):
    """lam with E[Z y_lam(Z)] = 1; the budget is strictly decreasing in lam."""
    tol = model.tol
    calls = [0]

    def g(x):
        calls[0] += 1
        b = _budget(math.exp(x), kind, geom, pref, kernel, tol.quad)
        # a zero budget means the threshold left the quadrature window
        return math.log(b) if b > 0 else -800.0

    # start with the payoff threshold at the median kernel value
    m = geom.m1 if kind is PayoffKind.TWO_BRANCH else geom.m2
    c = math.log(m) - kernel.log_mean
    lo, hi = c - 1.0, c + 1.0
    g_lo, g_hi = g(lo), g(hi)
    while g_lo < 0:
        hi, g_hi = lo, g_lo
        lo -= 2.0 * max(1.0, abs(lo - c))
        if lo < c - 700:
            raise NonConvergent("budget multiplier not bracketed from below")
        g_lo = g(lo)
    while g_hi > 0:
        lo, g_lo = hi, g_hi
        hi += 2.0 * max(1.0, abs(hi - c))
        if hi > c + 700:
            raise NonConvergent("budget multiplier not bracketed from above")
        g_hi = g(hi)
    x = brentq(g, lo, hi, xtol=1e-15, rtol=max(tol.root, 1e-15), maxiter=500)
    return math.exp(x), calls[0]


@lru_cache(maxsize=8192)
def _solve_cached(theta: float, model: ValidatedModel) -> OnePeriodSolution:
    pref = model.pref
    g, a, k = pref.gamma, pref.alpha, pref.k
    floor = -k * g**a
    tl = theta_lower(pref)
    if theta <= tl:
        law = PayoffLaw(theta, PayoffKind.ZERO, pref, corner=(theta == tl))
        return OnePeriodSolution(law, floor, 0.0, {"budget": 0.0, "duality_gap": 0.0})

    geom = envelope_geometry(theta, pref, model.tol.root)
    if geom.residual > 1e-10:
        raise ToleranceViolation(f"envelope equations residual {geom.residual:.3e}")
    kernel = kernel_law(model, model.market.tau)
    diag: Dict[str, float] = {"geometry_residual": geom.residual}

    if geom.case_tag is CaseTag.MODERATE_NEGATIVE:
        cap = geom.c4 * g
        if cap * math.exp(-model.market.r * model.market.tau) <= 1.0:
            law = PayoffLaw(theta, PayoffKind.CONSTANT_CAP, pref, geom, cap=cap)
            diag.update(budget=cap * math.exp(-model.market.r * model.market.tau),
                        duality_gap=0.0, constant_cap_flag=1.0)
            return OnePeriodSolution(law, float(f_eval(cap, theta, pref)), cap**a, diag)

    kind = PayoffKind.TWO_BRANCH if geom.case_tag is CaseTag.POSITIVE_THETA else PayoffKind.GAIN_ONLY
    lam, calls = _solve_multiplier(kind, geom, pref, kernel, model)
    m = geom.m1 if kind is PayoffKind.TWO_BRANCH else geom.m2
    law = PayoffLaw(theta, kind, pref, geom, lambda_star=lam, threshold_z=(m / lam,))
    budget, phi_val, h_val, fbar = law_moments(law, model, kernel)
    diag.update(budget=float(budget), budget_residual=abs(float(budget) - 1.0),
                duality_gap=float(fbar - phi_val), multiplier_evaluations=float(calls))
    if abs(budget - 1.0) > model.tol.check:
        raise ToleranceViolation(f"budget residual {abs(budget - 1.0):.3e} at theta={theta}")
    return OnePeriodSolution(law, float(phi_val), float(h_val), diag)


def solve_dual(theta: float, model: ValidatedModel) -> OnePeriodSolution:
    """Optimal law, value Phi(theta) and moment H(theta) of the one-period problem."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise DomainError("theta must be finite")
    return _solve_cached(theta, model)


def resolve_uncached(theta: float, model: ValidatedModel) -> OnePeriodSolution:
    """solve_dual without the memo table."""
    return _solve_cached.__wrapped__(float(theta), model)


def phi(theta: float, model: ValidatedModel) -> float:
    return solve_dual(theta, model).phi_value


def h_of_theta(theta: float, model: ValidatedModel) -> float:
    """E[Y*^alpha]; set-valued at the lower threshold, where CornerCase is raised."""
    if float(theta) == theta_lower(model.pref):
        raise CornerCase("H is the interval [0, H_upper] here; use h_interval_at_corner")
    return solve_dual(theta, model).h_value


def digital_payout(pref: PreferenceParams) -> float:
    """The nonzero payout of the corner digital payoffs."""
    if pref.k <= 0:
        raise DomainError("the digital corner needs k > 0")
    return pref.gamma * (1.0 + pref.k ** (-1.0 / (1.0 - pref.alpha)))


def h_interval_at_corner(model: ValidatedModel) -> CornerInterval:
    """Largest E[Y^alpha] over budget-feasible digital payoffs at the corner.

    The binding threshold eta* solves payout * E[Z 1{Z <= eta}] = 1, which
    has a closed form for the lognormal kernel.
    """
    m, pref = model.market, model.pref
    if not pref.gamma > math.exp(m.r * m.tau):
        raise DomainError("the corner interval needs gamma > exp(r tau)")
    payout = digital_payout(pref)
    kernel = kernel_law(model, m.tau)
    # E[Z 1{Z<=eta}] = exp(-r tau) N((log eta - m - s^2)/s)
    target = math.exp(m.r * m.tau) / payout
    eta = math.exp(kernel.log_mean + kernel.log_sd**2 + kernel.log_sd * float(ndtri(target)))
    h_upper = float(kernel.cdf(eta)) * payout**pref.alpha
    return CornerInterval(h_upper=h_upper, eta_star=eta, payout=payout)


def digital_law(target_xi: float, model: ValidatedModel) -> PayoffLaw:
    """Digital payoff at the corner theta whose alpha-moment equals target_xi."""
    pref = model.pref
    corner = h_interval_at_corner(model)
    if target_xi < 0 or target_xi > corner.h_upper * (1.0 + 1e-12):
        raise DomainError(f"target moment {target_xi} outside [0, {corner.h_upper}]")
    kernel = kernel_law(model, model.market.tau)
    p = min(target_xi / corner.payout**pref.alpha, float(kernel.cdf(corner.eta_star)))
    tl = theta_lower(pref)
    if p <= 0:
        return PayoffLaw(tl, PayoffKind.ZERO, pref, corner=True)
    eta = float(kernel.ppf(p)) if p < kernel.cdf(corner.eta_star) else corner.eta_star
    return PayoffLaw(tl, PayoffKind.DIGITAL, pref, threshold_z=(eta,),
                     digital_payout=corner.payout, digital_threshold_eta=eta, corner=True)


def atom_mass(law: PayoffLaw, model: ValidatedModel) -> float:
    """P(Y = 0) from the law's threshold."""
    kernel = kernel_law(model, model.market.tau)
    if law.kind is PayoffKind.ZERO:
        return 1.0
    if law.kind is PayoffKind.GAIN_ONLY or law.kind is PayoffKind.DIGITAL:
        return 1.0 - float(kernel.cdf(law.threshold_z[0]))
    return 0.0


def oracle_discrete(theta: float, model: ValidatedModel, n_z: int = 40, n_y: int = 1000) -> float:
    """Brute-force lower bound on Phi(theta) from a discretized problem.

    Z is cut into n_z equal-probability bins represented by their midpoint
    quantiles, and y is restricted to {0} plus a log-spaced grid.  For each
    multiplier the per-bin Lagrangian maximizer is picked.  Payoffs are
    constant on bins, so exact budgets follow from lognormal partial means.
    The multiplier is bisected to the point where the budget crosses 1;
    the bin whose choice flips there is split at a quantile so the budget
    binds.  The result is the value of a feasible payoff, hence a lower
    bound.
    """
    pref = model.pref
    g = pref.gamma
    if theta < theta_lower(pref):
        return -pref.k * g**pref.alpha
    kernel = kernel_law(model, model.market.tau)
    probs = np.arange(n_z + 1) / n_z
    edges = kernel.ppf(probs)
    pm_edges = kernel.partial_mean(edges)
    bin_budget = np.diff(pm_edges)
    z_mid = kernel.ppf((np.arange(n_z) + 0.5) / n_z)
    y = np.concatenate([[0.0], g * np.logspace(-4, 4, n_y - 1)])
    fy = f_eval(y, theta, pref)

    def pick(lam):
        lag = fy[None, :] - lam * z_mid[:, None] * y[None, :]
        return np.argmax(lag, axis=1)

    def budget(j):
        return float(bin_budget @ y[j])

    grid = np.logspace(-6, 6, 241)
    feasible = [i for i, lam in enumerate(grid) if budget(pick(lam)) <= 1.0]
    if not feasible:
        return -pref.k * g**pref.alpha
    i = feasible[0]
    if i == 0:
        return float(fy[pick(grid[0])].mean())
    lo, hi = grid[i - 1], grid[i]
    for _ in range(60):
        mid = math.sqrt(lo * hi)
        if budget(pick(mid)) <= 1.0:
            hi = mid
        else:
            lo = mid
    j_hi, j_lo = pick(hi), pick(lo)
    value = float(fy[j_hi].mean())
    slack = 1.0 - budget(j_hi)
    for b in np.nonzero(j_hi != j_lo)[0]:
        dy = y[j_lo[b]] - y[j_hi[b]]
        df = (fy[j_lo[b]] - fy[j_hi[b]]) / n_z
        if bin_budget[b] * dy <= slack:
            slack -= bin_budget[b] * dy
            value += df
            continue
        # low-z share f of bin b takes the larger payoff
        def cost(f):
            cut = kernel.ppf(probs[b] + f / n_z)
            return (float(kernel.partial_mean(cut)) - pm_edges[b]) * dy

        f_lo, f_hi = 0.0, 1.0
        for _ in range(80):
            f_mid = 0.5 * (f_lo + f_hi)
            if cost(f_mid) <= slack:
                f_lo = f_mid
            else:
                f_hi = f_mid
        value += f_lo * df
        break
    return value
