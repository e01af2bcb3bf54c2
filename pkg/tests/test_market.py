import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from periodic_portfolio import (
    DegenerateMarket,
    DomainError,
    IllPosed,
    MarketParams,
    NonConvergent,
    PreferenceParams,
    Tolerances,
    expect,
    kernel_law,
    validate,
)
from periodic_portfolio.market import KernelLaw

PREF = PreferenceParams(alpha=0.5, k=1.25, gamma=1.0, delta=0.3, beta=0.4)


def test_reference_constants(model_pos):
    assert model_pos.phi == pytest.approx(0.6, abs=1e-12)
    assert model_pos.h == pytest.approx(0.185, abs=1e-12)
    assert model_pos.contraction_modulus == pytest.approx(math.exp(-0.115), abs=1e-12)
    assert model_pos.merton_ratio == pytest.approx(8.0, abs=1e-12)
    assert model_pos.e_h_tau == pytest.approx(math.exp(0.185), abs=1e-12)
    assert model_pos.discount == pytest.approx(math.exp(-0.3))


def test_zero_premium_rejected():
    with pytest.raises(DegenerateMarket):
        validate(MarketParams(0.05, 0.2, 0.05), PREF)


def test_discount_must_beat_merton_exponent():
    with pytest.raises(IllPosed, match="delta > h"):
        validate(MarketParams(0.1, 0.15, 0.01), PreferenceParams(0.5, 1.25, 1.0, 0.1, 0.4))


@pytest.mark.parametrize("changes", [
    dict(alpha=0.0), dict(alpha=1.0), dict(k=-0.1), dict(gamma=0.0),
    dict(delta=-1.0), dict(beta=1.5), dict(beta=-0.1), dict(alpha=float("nan")),
])
def test_preference_domains(changes):
    fields = dict(alpha=0.5, k=1.25, gamma=1.0, delta=0.3, beta=0.4)
    fields.update(changes)
    with pytest.raises(DomainError):
        validate(MarketParams(0.1, 0.15, 0.01), PreferenceParams(**fields))


@pytest.mark.parametrize("market", [MarketParams(0.1, 0.0, 0.01), MarketParams(0.1, 0.15, 0.01, 0.0)])
def test_market_domains(market):
    with pytest.raises(DomainError):
        validate(market, PREF)


def test_tolerances_must_be_positive():
    with pytest.raises(DomainError):
        Tolerances(quad=0.0)


def test_negative_premium_is_allowed():
    m = validate(MarketParams(-0.05, 0.2, 0.01), PREF)
    assert m.phi < 0
    law = kernel_law(m, 1.0)
    assert law.log_sd > 0


def test_kernel_law_parameters(model_pos):
    law = kernel_law(model_pos, 0.5)
    assert law.log_mean == pytest.approx(-(0.01 + 0.18) * 0.5)
    assert law.log_sd == pytest.approx(0.6 * math.sqrt(0.5))
    with pytest.raises(DomainError):
        kernel_law(model_pos, 0.0)


def test_kernel_mean_is_discount_bond(model_pos):
    law = kernel_law(model_pos, 1.0)
    assert expect(law, lambda z: z) == pytest.approx(math.exp(-0.01), abs=1e-12)
    assert expect(law, lambda z: np.ones_like(z)) == pytest.approx(1.0, abs=1e-12)


def test_partial_mean_matches_quadrature_with_breakpoint(model_pos):
    law = kernel_law(model_pos, 1.0)
    for eta in (0.3, 0.9, 2.0):
        q = expect(law, lambda z: z * (z <= eta), breakpoints=(eta,))
        assert q == pytest.approx(float(law.partial_mean(eta)), abs=1e-11)


def test_cdf_ppf_pdf_consistent(model_pos):
    law = kernel_law(model_pos, 1.0)
    p = np.array([0.01, 0.3, 0.5, 0.99])
    assert np.allclose(law.cdf(law.ppf(p)), p, atol=1e-14)
    # density integrates to the cdf increment
    from scipy.integrate import quad
    a, b = law.ppf(0.2), law.ppf(0.7)
    val, _ = quad(lambda z: float(law.pdf(np.array([z]))[0]), a, b)
    assert val == pytest.approx(0.5, abs=1e-10)
    assert law.pdf(np.array([0.0, -1.0])).tolist() == [0.0, 0.0]


def test_stacked_integrands(model_pos):
    law = kernel_law(model_pos, 1.0)
    out = expect(law, lambda z: np.stack([z, z**2]))
    s2 = law.log_sd**2
    assert out[0] == pytest.approx(math.exp(law.log_mean + 0.5 * s2), abs=1e-12)
    assert out[1] == pytest.approx(math.exp(2 * law.log_mean + 2 * s2), abs=1e-11)


def test_quadrature_reports_failure(model_pos):
    law = kernel_law(model_pos, 1.0)
    rng = np.random.default_rng(0)
    with pytest.raises(NonConvergent):
        expect(law, lambda z: rng.standard_normal(z.shape), tol=1e-14)


@settings(max_examples=40, deadline=None)
@given(
    m=st.floats(-2.0, 1.0),
    s=st.floats(0.05, 1.5),
    p=st.floats(-1.5, 2.5),
)
def test_lognormal_power_moments(m, s, p):
    law = KernelLaw(1.0, m, s)
    exact = math.exp(p * m + 0.5 * (p * s) ** 2)
    got = expect(law, lambda z: z**p, tol=1e-12)
    # truncation of the standardized window at +-10 limits very heavy tails
    assert got == pytest.approx(exact, rel=1e-9)
