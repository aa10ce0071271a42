"""Shared fixtures: reference chains and market instances.

The two-state chain with P = [[0.7, 0.3], [0.4, 0.6]] has stationary law
(4/7, 3/7) and small enough numbers that the solved benchmark weights and the
derivatives at the extinction point come out as exact fractions (10/17, 7/17,
673/700, ...), which the market tests use as independent oracles.  The sticky
chain drives the frozen 2-state / 2-asset instance that the acceptance suite
pins down.
"""

import pytest

from rdstab import EnvironmentChain, MarketModel

TWO_STATE_TRANSITION = [[0.7, 0.3], [0.4, 0.6]]
STICKY_TRANSITION = [[0.98, 0.02], [0.02, 0.98]]


@pytest.fixture(scope="session")
def two_state_chain():
    return EnvironmentChain(transition=TWO_STATE_TRANSITION, seed=42)


@pytest.fixture(scope="session")
def oracle_market(two_state_chain):
    """r = 1/2 market whose benchmark strategy is exactly [[10/17, 7/17], [41/85, 44/85]]."""
    return MarketModel(chain=two_state_chain, r=0.5,
                      dividends=[[0.8, 0.2], [0.2, 0.8]],
                      rival=[[0.5, 0.5], [0.5, 0.5]])


@pytest.fixture(scope="session")
def sticky_chain():
    return EnvironmentChain(transition=STICKY_TRANSITION, seed=7)


@pytest.fixture(scope="session")
def fixture_market(sticky_chain):
    """The frozen 2-state / 2-asset instance shared with the acceptance suite."""
    return MarketModel(chain=sticky_chain, r=0.2,
                      dividends=[[0.95, 0.05], [0.05, 0.95]],
                      rival=[[0.5, 0.5], [0.5, 0.5]])


@pytest.fixture(scope="session")
def identity_market(fixture_market):
    """Same market, but the rival plays the solved benchmark itself."""
    return MarketModel(chain=fixture_market.chain, r=fixture_market.r,
                      dividends=fixture_market.dividends,
                      rival=fixture_market.kelly, kelly=fixture_market.kelly)
