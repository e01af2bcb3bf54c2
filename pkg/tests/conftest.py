import pytest

from periodic_portfolio import MarketParams, PreferenceParams, agent_constants, validate

REF_MARKET = MarketParams(mu=0.1, sigma=0.15, r=0.01, tau=1.0)


def reference_model(gamma, beta=0.4, **changes):
    fields = dict(alpha=0.5, k=1.25, gamma=gamma, delta=0.3, beta=beta)
    fields.update(changes)
    return validate(REF_MARKET, PreferenceParams(**fields))


@pytest.fixture(scope="session")
def model_pos():
    """Reference parameters with gamma = 1 (positive myopic value)."""
    return reference_model(1.0)


@pytest.fixture(scope="session")
def model_neg():
    """Reference parameters with gamma = 2.5 (negative myopic value)."""
    return reference_model(2.5)


@pytest.fixture(scope="session")
def model_corner():
    """Parameters where the sophisticated fixed point sits at the corner."""
    return reference_model(10.0)


@pytest.fixture(scope="session")
def consts_pos(model_pos):
    return agent_constants(model_pos)


@pytest.fixture(scope="session")
def consts_neg(model_neg):
    return agent_constants(model_neg)


@pytest.fixture(scope="session")
def consts_corner(model_corner):
    return agent_constants(model_corner)


@pytest.fixture(scope="session")
def make_model():
    return reference_model


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance lines collected by test_acceptance."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
