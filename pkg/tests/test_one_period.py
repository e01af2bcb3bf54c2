import math

import numpy as np
import pytest

from periodic_portfolio import CornerCase, DomainError, oracle_discrete, phi, solve_dual
from periodic_portfolio.envelope import f_eval, theta_lower
from periodic_portfolio.market import expect, kernel_law
from periodic_portfolio.one_period import (
    PayoffKind,
    atom_mass,
    digital_law,
    digital_payout,
    h_interval_at_corner,
    h_of_theta,
    law_moments,
    payoff_eval,
    resolve_uncached,
)

THETAS = (-1.3, -0.5, 0.0, 0.5, 2.0)


def conjugate_bound(theta, model, lam, n_y=40_001):
    """lam + E[max_y F(y) - lam Z y] over a dense y grid: a dual upper bound.

    Maximizing over a grid understates the inner sup by at most the grid
    error, so the result is an upper bound up to that error.
    """
    g = model.pref.gamma
    y = np.concatenate([[0.0], g * np.logspace(-5, 3, n_y)])
    fy = f_eval(y, theta, model.pref)
    law = kernel_law(model, model.market.tau)
    zq = law.ppf((np.arange(4000) + 0.5) / 4000)
    inner = np.array([np.max(fy - lam * z * y) for z in zq])
    return lam + inner.mean()


@pytest.mark.parametrize("theta", THETAS)
def test_budget_binds_and_duality_gap_closes(model_pos, theta):
    sol = solve_dual(theta, model_pos)
    assert sol.diagnostics["budget_residual"] <= 1e-8
    assert abs(sol.diagnostics["duality_gap"]) <= 1e-9


@pytest.mark.parametrize("theta", THETAS)
def test_oracle_sandwich(model_pos, theta):
    val = phi(theta, model_pos)
    coarse = oracle_discrete(theta, model_pos, 40, 1000)
    fine = oracle_discrete(theta, model_pos, 80, 2000)
    assert coarse <= val + 1e-12 and fine <= val + 1e-12
    assert val - coarse <= 1e-2
    assert val - fine < val - coarse
    law = solve_dual(theta, model_pos).law
    upper = conjugate_bound(theta, model_pos, law.lambda_star)
    assert upper >= val - 1e-3
    assert upper - val <= 5e-3


@pytest.mark.parametrize("theta", THETAS)
def test_payoff_non_increasing_in_kernel(model_pos, theta):
    law = solve_dual(theta, model_pos).law
    z = np.logspace(-2, 1.5, 2000)
    y = payoff_eval(law, z)
    assert np.all(np.diff(y) <= 1e-12)
    assert np.all(y >= 0)


def test_payoff_kinds(model_pos, model_neg):
    assert solve_dual(0.5, model_pos).law.kind is PayoffKind.TWO_BRANCH
    assert solve_dual(-0.5, model_pos).law.kind is PayoffKind.GAIN_ONLY
    assert solve_dual(0.0, model_pos).law.kind is PayoffKind.GAIN_ONLY
    z = solve_dual(-1.7, model_neg)
    assert z.law.kind is PayoffKind.ZERO
    assert z.phi_value == pytest.approx(-1.25 * math.sqrt(2.5))
    assert z.h_value == 0.0


def test_two_branch_jumps_over_benchmark(model_pos):
    law = solve_dual(0.5, model_pos).law
    t = law.threshold_z[0]
    below, above = payoff_eval(law, t * (1 - 1e-9)), payoff_eval(law, t * (1 + 1e-9))
    g = model_pos.pref.gamma
    assert below > g > above > 0


def test_gain_only_atom(model_neg):
    sol = solve_dual(-0.6, model_neg)
    law = sol.law
    assert payoff_eval(law, law.threshold_z[0] * 1.001) == 0.0
    mass = atom_mass(law, model_neg)
    kernel = kernel_law(model_neg, 1.0)
    t = law.threshold_z[0]
    direct = expect(kernel, lambda z: (payoff_eval(law, z) == 0).astype(float), (t,))
    assert mass == pytest.approx(direct, abs=1e-10)


def test_constant_cap_case(make_model):
    m = make_model(0.3)
    sol = solve_dual(-1.5, m)
    assert sol.law.kind is PayoffKind.CONSTANT_CAP
    cap = sol.law.cap
    assert cap * math.exp(-m.market.r) <= 1.0
    assert sol.phi_value == pytest.approx(f_eval(cap, -1.5, m.pref))
    assert np.all(payoff_eval(sol.law, np.array([0.1, 1.0, 5.0])) == cap)


def test_value_is_convex_with_slope_h(model_pos, model_neg):
    """Envelope theorem: dPhi/dtheta = H, checked by central differences."""
    for model in (model_pos, model_neg):
        for th in (-1.0, -0.3, 0.4, 1.5):
            e = 1e-4
            slope = (phi(th + e, model) - phi(th - e, model)) / (2 * e)
            assert slope == pytest.approx(solve_dual(th, model).h_value, rel=1e-5, abs=1e-7)
        grid = np.linspace(-1.5, 2.0, 40)
        vals = np.array([phi(t, model) for t in grid])
        assert np.all(np.diff(vals, 2) >= -1e-10)


def test_h_bounded_by_merton(model_pos):
    for th in np.linspace(-1.5, 3.0, 10):
        assert 0 <= solve_dual(th, model_pos).h_value <= model_pos.e_h_tau


def test_law_moments_report(model_pos):
    law = solve_dual(0.3, model_pos).law
    budget, ef, ya, fbar = law_moments(law, model_pos)
    assert budget == pytest.approx(1.0, abs=1e-9)
    assert ef == pytest.approx(fbar, abs=1e-9)


def test_uncached_solve_agrees(model_pos):
    a, b = solve_dual(0.25, model_pos), resolve_uncached(0.25, model_pos)
    assert a is not b
    assert a.phi_value == b.phi_value


def test_corner_interval(model_neg):
    p = model_neg.pref
    ci = h_interval_at_corner(model_neg)
    kernel = kernel_law(model_neg, 1.0)
    payout = digital_payout(p)
    assert payout == pytest.approx(p.gamma * (1 + p.k ** (-2)))
    assert payout * float(kernel.partial_mean(ci.eta_star)) == pytest.approx(1.0, abs=1e-10)
    assert ci.h_upper < p.gamma**p.alpha * (1 + p.k ** (-1 / (1 - p.alpha))) ** p.alpha
    with pytest.raises(CornerCase):
        h_of_theta(theta_lower(p), model_neg)


def test_h_approaches_corner_upper_value(model_neg):
    tl = theta_lower(model_neg.pref)
    ci = h_interval_at_corner(model_neg)
    near = [solve_dual(tl + e, model_neg).h_value for e in (1e-3, 1e-5, 1e-7)]
    gaps = [abs(h - ci.h_upper) for h in near]
    assert gaps[-1] < 1e-3
    assert gaps[0] > gaps[-1]


def test_digital_law(model_neg):
    ci = h_interval_at_corner(model_neg)
    for target in (0.0, 0.3, 0.7 * ci.h_upper, ci.h_upper):
        law = digital_law(target, model_neg)
        budget, ef, ya, _ = law_moments(law, model_neg)
        assert ya == pytest.approx(target, abs=1e-9)
        assert budget <= 1.0 + 1e-9
        assert ef == pytest.approx(-1.25 * math.sqrt(2.5), abs=1e-9)
    with pytest.raises(DomainError):
        digital_law(1.01 * ci.h_upper, model_neg)


def test_corner_needs_positive_loss_aversion(make_model):
    with pytest.raises(DomainError):
        digital_payout(make_model(2.5, k=0.0).pref)


def test_nonfinite_theta(model_pos):
    with pytest.raises(DomainError):
        solve_dual(float("nan"), model_pos)
