"""Random instance generators for the property-based suites.

Chains are drawn with Dirichlet rows bounded away from zero, so they are
automatically irreducible; markets are rejected (and the rejections counted)
when the redundancy check fails or the rival accidentally coincides with the
solved benchmark.
"""

from __future__ import annotations

import logging

import numpy as np

from .environment import EnvironmentChain, stationary_distribution
from .market import MarketModel, check_no_redundant_assets

log = logging.getLogger(__name__)

_MIN_ENTRY = 0.02


def random_chain(rng: np.random.Generator, num_states: int, seed: int = 0) -> EnvironmentChain:
    """Irreducible chain with all transition entries at least ~0.02/S."""
    raw = rng.dirichlet(np.ones(num_states), size=num_states)
    p = (raw + _MIN_ENTRY / num_states)
    p /= p.sum(axis=1, keepdims=True)
    return EnvironmentChain(transition=p, seed=seed,
                            stationary=stationary_distribution(p))


def random_market(rng: np.random.Generator, max_states: int = 8,
                  max_assets: int = 5, seed: int = 0) -> MarketModel | None:
    """One random market draw, or None when the instance fails its checks."""
    S = int(rng.integers(2, max_states + 1))
    K = int(rng.integers(2, min(max_assets, S) + 1))
    chain = random_chain(rng, S, seed=seed)
    r = float(rng.uniform(0.05, 0.95))
    dividends = rng.dirichlet(np.ones(K), size=S)
    rival = rng.dirichlet(np.ones(K), size=S)
    model = MarketModel(chain=chain, r=r, dividends=dividends, rival=rival)
    if not check_no_redundant_assets(model).passes:
        return None
    if np.max(np.abs(model.rival - model.kelly)) < 1e-6:
        return None  # a rival this close to the benchmark has no usable rate
    return model


def random_market_suite(count: int, seed: int, max_states: int = 8,
                        max_assets: int = 5) -> list[MarketModel]:
    """Draw ``count`` valid random markets, logging the rejection tally."""
    rng = np.random.Generator(np.random.Philox(seed))
    models: list[MarketModel] = []
    rejected = 0
    while len(models) < count:
        model = random_market(rng, max_states, max_assets, seed=len(models))
        if model is None:
            rejected += 1
            continue
        models.append(model)
    if rejected:
        log.info("random market suite: %d instances, %d rejected", count, rejected)
    return models
