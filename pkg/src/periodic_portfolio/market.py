"""Model parameters, the lognormal pricing-kernel law and kernel quadrature.

Every expectation in the package goes through :func:`expect`, which
integrates in the standardized Gaussian variable of ``log Z`` with
Gauss-Legendre panels split at caller-supplied breakpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DegenerateMarket, DomainError, IllPosed, NonConvergent


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by every solver.

    Attributes:
        quad: absolute tolerance of one kernel expectation.
        root: relative tolerance of scalar root searches.
        fixed_point: step size at which contraction iterations stop.
        check: threshold for post-solve residual checks.
    """

    quad: float = 1e-10
    root: float = 1e-12
    fixed_point: float = 1e-10
    check: float = 1e-8

    def __post_init__(self) -> None:
        for name in ("quad", "root", "fixed_point", "check"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise DomainError(f"tolerance {name} must be positive, got {val}")


@dataclass(frozen=True)
class MarketParams:
    mu: float
    sigma: float
    r: float
    tau: float = 1.0


@dataclass(frozen=True)
class PreferenceParams:
    alpha: float
    k: float
    gamma: float
    delta: float
    beta: float


@dataclass(frozen=True)
class ValidatedModel:
    """Parameters that passed validation, with derived market constants."""

    market: MarketParams
    pref: PreferenceParams
    phi: float
    h: float
    e_h_tau: float
    contraction_modulus: float
    tol: Tolerances = field(default_factory=Tolerances)

    @property
    def discount(self) -> float:
        """One-period exponential discount factor."""
        return math.exp(-self.pref.delta * self.market.tau)

    @property
    def merton_ratio(self) -> float:
        m, a = self.market, self.pref.alpha
        return (m.mu - m.r) / (m.sigma**2 * (1.0 - a))

    def with_pref(self, **changes: float) -> "ValidatedModel":
        """Re-validate with some preference fields replaced."""
        return validate(self.market, replace(self.pref, **changes), self.tol)

    def with_tol(self, tol: Tolerances) -> "ValidatedModel":
        return replace(self, tol=tol)


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value}")
    return value


def validate(
    market: MarketParams,
    pref: PreferenceParams,
    tol: Optional[Tolerances] = None,
) -> ValidatedModel:
    """Check parameter domains and the well-posedness condition.

    Raises:
        DomainError: a field is outside its domain.
        DegenerateMarket: the Sharpe ratio is zero.
        IllPosed: delta does not exceed the Merton exponent h.
    """
    mu = _finite("mu", market.mu)
    sigma = _finite("sigma", market.sigma)
    r = _finite("r", market.r)
    tau = _finite("tau", market.tau)
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if tau <= 0:
        raise DomainError(f"tau must be positive, got {tau}")
    alpha = _finite("alpha", pref.alpha)
    k = _finite("k", pref.k)
    gamma = _finite("gamma", pref.gamma)
    delta = _finite("delta", pref.delta)
    beta = _finite("beta", pref.beta)
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0,1), got {alpha}")
    if k < 0:
        raise DomainError(f"k must be non-negative, got {k}")
    if gamma <= 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    if delta <= 0:
        raise DomainError(f"delta must be positive, got {delta}")
    if not 0 <= beta <= 1:
        raise DomainError(f"beta must lie in [0,1], got {beta}")

    phi = (mu - r) / sigma
    if phi == 0:
        raise DegenerateMarket("mu equals r: the Sharpe ratio is zero")
    h = r * alpha + alpha * phi**2 / (2.0 * (1.0 - alpha))
    if not delta > h:
        raise IllPosed(
            f"well-posedness requires delta > h; got delta={delta}, h={h}"
        )
    return ValidatedModel(
        market=MarketParams(mu, sigma, r, tau),
        pref=PreferenceParams(alpha, k, gamma, delta, beta),
        phi=phi,
        h=h,
        e_h_tau=math.exp(h * tau),
        contraction_modulus=math.exp(-(delta - h) * tau),
        tol=tol if tol is not None else Tolerances(),
    )


@dataclass(frozen=True)
class KernelLaw:
    """Lognormal law of the pricing-kernel ratio over ``horizon``."""

    horizon: float
    log_mean: float
    log_sd: float

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        pos = z > 0
        w = (np.log(z[pos]) - self.log_mean) / self.log_sd
        out[pos] = np.exp(-0.5 * w * w) / (z[pos] * self.log_sd * math.sqrt(2 * math.pi))
        return out

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore"):
            w = (np.log(np.maximum(z, 0.0)) - self.log_mean) / self.log_sd
        return ndtr(w)

    def ppf(self, p):
        return np.exp(self.log_mean + self.log_sd * ndtri(np.asarray(p, dtype=float)))

    def partial_mean(self, eta):
        """E[Z 1{Z <= eta}] in closed form."""
        eta = np.asarray(eta, dtype=float)
        with np.errstate(divide="ignore"):
            w = (np.log(np.maximum(eta, 0.0)) - self.log_mean) / self.log_sd
        mean = math.exp(self.log_mean + 0.5 * self.log_sd**2)
        return mean * ndtr(w - self.log_sd)

    def standardize(self, z):
        return (np.log(z) - self.log_mean) / self.log_sd

    def sample(self, normals):
        """Map standard normal draws to kernel ratios."""
        return np.exp(self.log_mean + self.log_sd * np.asarray(normals, dtype=float))


def kernel_law(model: ValidatedModel, horizon: float) -> KernelLaw:
    horizon = float(horizon)
    if not (math.isfinite(horizon) and horizon > 0):
        raise DomainError(f"horizon must be positive, got {horizon}")
    m = model.market
    return KernelLaw(
        horizon=horizon,
        log_mean=-(m.r + 0.5 * model.phi**2) * horizon,
        log_sd=abs(model.phi) * math.sqrt(horizon),
    )


# Gauss-Legendre rule reused by every panel.
_ORDER = 20
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_ORDER)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
HALF_WIDTH = 10.0
MAX_ROUNDS = 40
MAX_PANELS = 4096


def _panel_sums(law: KernelLaw, integrand, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gauss-Legendre estimates on each panel [a_i, b_i]; shape (m, P)."""
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    w = mid[:, None] + half[:, None] * _GL_X[None, :]
    z = np.exp(law.log_mean + law.log_sd * w)
    vals = np.asarray(integrand(z.ravel()), dtype=float)
    vals = vals.reshape((-1,) + w.shape)
    dens = np.exp(-0.5 * w * w) * _INV_SQRT_2PI
    return (vals * dens[None] * _GL_W[None, None, :]).sum(axis=2) * half[None, :]


def expect(
    law: KernelLaw,
    integrand: Callable[[np.ndarray], np.ndarray],
    breakpoints: Iterable[float] = (),
    tol: float = 1e-10,
):
    """E[integrand(Z)] for Z distributed by ``law``.

    ``integrand`` maps a 1-D array of kernel values to an array of the same
    length, or to a ``(m, n)`` stack of m integrands evaluated jointly, in
    which case an array of m expectations is returned.  ``breakpoints`` are
    the kernel values where the integrand jumps or kinks; panels are split
    there exactly.

    Raises:
        NonConvergent: a panel is still above tolerance after MAX_ROUNDS
            bisections, or the active panels exceed MAX_PANELS.
    """
    cuts = []
    for b in breakpoints:
        b = float(b)
        if b > 0 and math.isfinite(b):
            w = (math.log(b) - law.log_mean) / law.log_sd
            if -HALF_WIDTH < w < HALF_WIDTH:
                cuts.append(w)
    edges = np.array([-HALF_WIDTH] + sorted(set(cuts)) + [HALF_WIDTH])
    a, b = edges[:-1], edges[1:]
    a, b = a[b > a], b[b > a]
    span = 2.0 * HALF_WIDTH

    # each round evaluates the coarse rule and both halves in one call
    total = None
    for _ in range(MAX_ROUNDS):
        mid = 0.5 * (a + b)
        n = a.size
        sums = _panel_sums(law, integrand, np.concatenate([a, a, mid]),
                           np.concatenate([b, mid, b]))
        coarse, left, right = sums[:, :n], sums[:, n:2 * n], sums[:, 2 * n:]
        if total is None:
            total = np.zeros(sums.shape[0])
        fine = left + right
        err = np.max(np.abs(fine - coarse), axis=0)
        done = err <= tol * (b - a) / span
        total += fine[:, done].sum(axis=1)
        if done.all():
            return total if total.shape[0] > 1 else float(total[0])
        keep = ~done
        if 2 * keep.sum() > MAX_PANELS:
            raise NonConvergent(f"quadrature needs more than {MAX_PANELS} panels for tolerance {tol}")
        a = np.concatenate([a[keep], mid[keep]])
        b = np.concatenate([mid[keep], b[keep]])
    raise NonConvergent(f"quadrature did not reach tolerance {tol} after {MAX_ROUNDS} rounds")
