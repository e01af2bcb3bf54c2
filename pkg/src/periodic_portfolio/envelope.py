"""The one-period objective, its concave majorant and inverse marginal maps.

The objective is F(y; theta) = U(y - gamma) + theta * y**alpha with the
piecewise power utility U.  Everything scales with gamma, so the geometry
is computed for gamma = 1 ("normalized units": y = u * gamma, slopes
q = qn * gamma**(alpha - 1)) and rescaled on the way out.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NonConvergent
from .market import PreferenceParams

THETA_FLOOR = 1e-12
_EPS = 1e-14


class CaseTag(str, enum.Enum):
    POSITIVE_THETA = "PositiveTheta"
    MILD_NEGATIVE = "MildNegative"
    MODERATE_NEGATIVE = "ModerateNegative"
    DEGENERATE = "Degenerate"


def utility(x, pref: PreferenceParams):
    """Piecewise power utility: x**alpha on gains, -k|x|**alpha on losses."""
    x = np.asarray(x, dtype=float)
    mag = np.abs(x) ** pref.alpha
    out = np.where(x >= 0, mag, -pref.k * mag)
    return float(out) if out.ndim == 0 else out


def f_eval(y, theta: float, pref: PreferenceParams):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise DomainError("gross return must be non-negative")
    out = utility(y - pref.gamma, pref) + theta * y**pref.alpha
    return float(out) if np.ndim(out) == 0 else out


def theta_lower(pref: PreferenceParams) -> float:
    a = pref.alpha
    return -((1.0 + pref.k ** (1.0 / (1.0 - a))) ** (1.0 - a))


def _fn(u, theta: float, pref: PreferenceParams):
    """F in normalized units (gamma = 1)."""
    u = np.asarray(u, dtype=float)
    a = pref.alpha
    d = u - 1.0
    return np.where(d >= 0, np.abs(d) ** a, -pref.k * np.abs(d) ** a) + theta * u**a


# --- inverse marginal maps in normalized units -------------------------------

def _solve_increasing(fun, lo, hi, x0, maxiter: int = 200):
    """Elementwise safeguarded Newton for increasing f with f(lo)<=0<=f(hi)."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    x = np.clip(np.array(x0, dtype=float), lo, hi)
    active = np.ones(x.shape, dtype=bool)
    for _ in range(maxiter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        xi, li, hi_ = x[idx], lo[idx], hi[idx]
        with np.errstate(all="ignore"):
            f, df = fun(xi, idx)
            li = np.where(f < 0, xi, li)
            hi_ = np.where(f > 0, xi, hi_)
            xn = xi - f / df
        bad = ~np.isfinite(xn) | (xn <= li) | (xn >= hi_)
        xn = np.where(bad, 0.5 * (li + hi_), xn)
        xn = np.where(f == 0, xi, xn)
        scale = np.maximum(1.0, np.abs(xi))
        conv = (np.abs(xn - xi) <= _EPS * scale) | (hi_ - li <= _EPS * scale)
        # f is a log-ratio, so |f| is the relative residual of the equation
        small = np.abs(f) <= _EPS
        xn = np.where(small, xi, xn)
        conv |= small
        x[idx], lo[idx], hi[idx] = xn, li, hi_
        active[idx[conv]] = False
    return x


def _gain_marginal(u, theta, a):
    return a * ((u - 1.0) ** (a - 1.0) + theta * u ** (a - 1.0))


def _gain_marginal_d(d, theta, a):
    # same as _gain_marginal(1 + d) without the cancellation in (1 + d) - 1
    return a * (d ** (a - 1.0) + theta * (1.0 + d) ** (a - 1.0))


def _inv_gain_n(qn: np.ndarray, theta: float, pref: PreferenceParams) -> np.ndarray:
    """Root u > 1 of a[(u-1)^(a-1) + theta u^(a-1)] = qn, vectorized."""
    a = pref.alpha
    p = 1.0 / (a - 1.0)
    qn = np.asarray(qn, dtype=float)
    flat = qn.ravel()
    out = np.empty_like(flat)
    zero = flat == 0
    if theta < -1.0:
        c4 = 1.0 / (1.0 - abs(theta) ** (-1.0 / (1.0 - a)))
        out[zero] = c4
    pos = ~zero
    q = flat[pos]
    if q.size == 0:
        return out.reshape(qn.shape)
    logq = np.log(q)
    # x = log(u - 1); x0 solves the pure-gain equation
    x0 = p * np.log(q / a)
    if theta == 0.0:
        out[pos] = 1.0 + np.exp(x0)
        return out.reshape(qn.shape)

    def resid(x, lq):
        with np.errstate(all="ignore"):
            lhs = _gain_marginal_d(np.exp(x), theta, a)
            return np.where(lhs > 0, lq - np.log(lhs), np.inf)

    if theta > 0:
        lo = x0.copy()
        hi = p * np.log(q / (a * (1.0 + theta)))
    else:
        hi = x0.copy()
        if theta < -1.0:
            hi = np.minimum(hi, math.log(c4 - 1.0))
        lo = hi - 1.0
        if theta > -1.0:
            # LHS > a(1+theta)u^(a-1), which bounds the root from below
            u_asym = (q / (a * (1.0 + theta))) ** p
            with np.errstate(divide="ignore"):
                lo = np.where(u_asym > 1.0, np.log(np.maximum(u_asym - 1.0, 0.0)), lo)
            lo = np.minimum(lo, hi)
        sub = np.arange(q.size)
        while True:
            need = resid(lo[sub], logq[sub]) > 0
            if not need.any():
                break
            sub = sub[need]
            lo[sub] -= 2.0 * (1.0 + np.abs(lo[sub]))

    def fun(x, idx):
        d = np.exp(x)
        u = 1.0 + d
        lhs = _gain_marginal_d(d, theta, a)
        dlhs = a * (a - 1.0) * (d ** (a - 2.0) + theta * u ** (a - 2.0))
        ok = lhs > 0
        f = np.where(ok, logq[idx] - np.log(np.where(ok, lhs, 1.0)), np.inf)
        df = np.where(ok, -d * dlhs / np.where(ok, lhs, 1.0), np.nan)
        return f, df

    x = _solve_increasing(fun, lo, hi, hi if theta < 0 else x0)
    out[pos] = 1.0 + np.exp(x)
    return out.reshape(qn.shape)


def c_tilde(theta: float, pref: PreferenceParams) -> float:
    """Upper end of the loss-side branch where the marginal is decreasing."""
    if pref.k == 0:
        return 1.0
    return 1.0 / (1.0 + (pref.k / theta) ** (1.0 / (2.0 - pref.alpha)))


def _loss_marginal(u, theta, pref):
    a = pref.alpha
    return a * (pref.k * (1.0 - u) ** (a - 1.0) + theta * u ** (a - 1.0))


def _n_tilde_n(theta: float, pref: PreferenceParams) -> float:
    if pref.k == 0:
        return pref.alpha * theta
    return float(_loss_marginal(c_tilde(theta, pref), theta, pref))


def _inv_loss_n(qn: np.ndarray, theta: float, pref: PreferenceParams) -> np.ndarray:
    """Root u in (0, c_tilde] of a[k(1-u)^(a-1) + theta u^(a-1)] = qn."""
    a = pref.alpha
    qn = np.asarray(qn, dtype=float)
    # theta u^(a-1) alone gives a lower bound for the root
    lo = np.log(qn / (a * theta)) / (a - 1.0)
    if pref.k == 0:
        return np.exp(lo)
    ct = c_tilde(theta, pref)
    hi = np.full_like(lo, math.log(ct))
    lo = np.minimum(lo, hi)
    logq = np.log(qn)

    def fun(x, idx):
        u = np.exp(x)
        lhs = _loss_marginal(u, theta, pref)
        dlhs = a * (1.0 - a) * (pref.k * (1.0 - u) ** (a - 2.0) - theta * u ** (a - 2.0))
        return logq.ravel()[idx] - np.log(lhs), -u * dlhs / lhs

    x = _solve_increasing(fun, lo.ravel(), hi.ravel(), lo.ravel())
    return np.exp(x).reshape(qn.shape)


def n_tilde(theta: float, pref: PreferenceParams) -> float:
    """Smallest slope in the domain of the loss-side inverse map."""
    if theta <= 0:
        raise DomainError("the loss-side inverse map needs theta > 0")
    return _n_tilde_n(theta, pref) * pref.gamma ** (pref.alpha - 1.0)


def inv_marginal_loss(q, theta: float, pref: PreferenceParams):
    """Inverse of y -> a[k(gamma-y)^(a-1) + theta y^(a-1)] on (0, c_tilde*gamma]."""
    if not theta > 0:
        raise DomainError("the loss-side inverse map needs theta > 0")
    g, a = pref.gamma, pref.alpha
    q = np.asarray(q, dtype=float)
    nt = n_tilde(theta, pref)
    if np.any(q < nt * (1 - 1e-14)):
        raise DomainError(f"slope below the loss-branch minimum {nt}")
    qn = np.maximum(q * g ** (1.0 - a), _n_tilde_n(theta, pref))
    out = g * _inv_loss_n(qn, theta, pref)
    return float(out) if out.ndim == 0 else out


def inv_marginal_gain(q, theta: float, pref: PreferenceParams):
    """Inverse of y -> a[(y-gamma)^(a-1) + theta y^(a-1)] on y > gamma."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0) or (theta >= -1.0 and np.any(q == 0)):
        raise DomainError("gain-side inverse map needs q > 0 (or q >= 0 when theta < -1)")
    g, a = pref.gamma, pref.alpha
    out = g * _inv_gain_n(q * g ** (1.0 - a), theta, pref)
    return float(out) if out.ndim == 0 else out


# --- geometry ------------------------------------------------------------------

@dataclass(frozen=True)
class EnvelopeGeometry:
    """Case tag and constants of the concave majorant at one theta.

    c-values are multiples of gamma; slopes m1, m2 are in the caller's units.
    Fields that do not apply to the case are None.
    """

    theta: float
    case_tag: CaseTag
    theta_lower: float
    gamma: float
    c1: Optional[float] = None
    c2: Optional[float] = None
    c3: Optional[float] = None
    c4: Optional[float] = None
    m1: Optional[float] = None
    m2: Optional[float] = None
    residual: float = 0.0


def _c3_equation(d: float, theta: float, pref: PreferenceParams) -> float:
    # tangent from (0, -k) touching the gain branch at u = 1 + d
    a = pref.alpha
    u = 1.0 + d
    return d**a + theta * (1.0 - a) * u**a - a * u * d ** (a - 1.0) + pref.k


def _solve_c3(theta: float, pref: PreferenceParams, c4: Optional[float], rtol: float) -> float:
    a = pref.alpha
    if pref.k > 0:
        d_hi = pref.k ** (-1.0 / (1.0 - a))
    else:
        d_hi = 1.0
        while _c3_equation(d_hi, theta, pref) < 0:
            d_hi *= 2.0
            if d_hi > 1e300:
                raise NonConvergent("no upper bracket for the tangent point")
    if c4 is not None:
        d_hi = min(d_hi, c4 - 1.0)
    if _c3_equation(d_hi, theta, pref) == 0:
        return 1.0 + d_hi
    d_lo = 0.5 * d_hi
    while _c3_equation(d_lo, theta, pref) > 0:
        d_lo *= 0.5
        if d_lo < 1e-300:
            raise NonConvergent("no lower bracket for the tangent point")
    x = brentq(
        lambda x: _c3_equation(math.exp(x), theta, pref),
        math.log(d_lo), math.log(d_hi), xtol=1e-300, rtol=max(rtol, 1e-15), maxiter=500,
    )
    return 1.0 + math.exp(x)


def _common_tangent(theta: float, pref: PreferenceParams, rtol: float):
    """Slope touching both the loss and the gain branch (normalized units)."""
    n_lo = _n_tilde_n(theta, pref)

    def gap(m):
        u1 = float(_inv_loss_n(np.array(m), theta, pref))
        u2 = float(_inv_gain_n(np.array(m), theta, pref))
        return float(_fn(u2, theta, pref) - m * u2 - (_fn(u1, theta, pref) - m * u1))

    # the intercept gap is strictly decreasing in the slope
    if gap(n_lo) <= 0:
        raise NonConvergent("common tangent not bracketed at the loss-branch minimum slope")
    m_hi = max(2.0 * n_lo, 1.0)
    while gap(m_hi) > 0:
        m_hi *= 2.0
        if m_hi > 1e300:
            raise NonConvergent("common tangent slope not bracketed")
    m = brentq(gap, n_lo, m_hi, xtol=1e-300, rtol=max(rtol, 1e-15), maxiter=500)
    u1 = float(_inv_loss_n(np.array(m), theta, pref))
    u2 = float(_inv_gain_n(np.array(m), theta, pref))
    return m, u1, u2


@lru_cache(maxsize=4096)
def _geometry_cached(theta: float, pref: PreferenceParams, rtol: float) -> EnvelopeGeometry:
    a, g = pref.alpha, pref.gamma
    tl = theta_lower(pref)
    scale = g ** (a - 1.0)
    if theta <= tl:
        return EnvelopeGeometry(theta, CaseTag.DEGENERATE, tl, g)
    if theta > 0:
        th = max(theta, THETA_FLOOR)
        m, c1, c2 = _common_tangent(th, pref, rtol)
        chord = (_fn(c2, th, pref) - _fn(c1, th, pref)) / (c2 - c1)
        res = max(
            abs(chord - m),
            abs(_loss_marginal(c1, th, pref) - m) if pref.k > 0 else 0.0,
            abs(_gain_marginal(c2, th, a) - m),
        ) / max(1.0, m)
        return EnvelopeGeometry(theta, CaseTag.POSITIVE_THETA, tl, g,
                                c1=c1, c2=c2, m1=m * scale, residual=float(res))
    c4 = None
    tag = CaseTag.MILD_NEGATIVE
    if theta < -1.0:
        tag = CaseTag.MODERATE_NEGATIVE
        c4 = 1.0 / (1.0 - abs(theta) ** (-1.0 / (1.0 - a)))
    c3 = _solve_c3(theta, pref, c4, rtol)
    m = float((c3 - 1.0) ** a + theta * c3**a + pref.k) / c3
    res = abs(m - _gain_marginal(c3, theta, a)) / max(1.0, m)
    return EnvelopeGeometry(theta, tag, tl, g, c3=c3, c4=c4, m2=m * scale, residual=float(res))


def envelope_geometry(theta: float, pref: PreferenceParams, rtol: float = 1e-12) -> EnvelopeGeometry:
    """Classify theta and solve for the contact points and chord slopes."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise DomainError("theta must be finite")
    return _geometry_cached(theta, pref, float(rtol))


def envelope_eval(y, geom: EnvelopeGeometry, pref: PreferenceParams):
    """Value of the smallest concave majorant of F at y >= 0."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise DomainError("gross return must be non-negative")
    g, th = pref.gamma, geom.theta
    floor = -pref.k * g**pref.alpha
    tag = geom.case_tag
    if tag is CaseTag.DEGENERATE:
        out = np.full_like(y, floor)
    else:
        fy = f_eval(y, th, pref)
        if tag is CaseTag.POSITIVE_THETA:
            y1, y2 = geom.c1 * g, geom.c2 * g
            chord = f_eval(y1, th, pref) + geom.m1 * (y - y1)
            out = np.where((y > y1) & (y < y2), chord, fy)
        else:
            y3 = geom.c3 * g
            out = np.where(y < y3, floor + geom.m2 * y, fy)
            if tag is CaseTag.MODERATE_NEGATIVE:
                y4 = geom.c4 * g
                out = np.where(y > y4, f_eval(y4, th, pref), out)
    return float(out) if out.ndim == 0 else out
