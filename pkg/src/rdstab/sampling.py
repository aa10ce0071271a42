"""Deterministic low-discrepancy point patterns for supremum sampling.

Suprema over balls and intervals are estimated on fixed quasi-random patterns
rather than pseudo-random draws, so repeated calls see literally the same
points and sampled sups are reproducible.  Patterns never contain the centre
point itself (remainder quotients divide by the distance to the centre) and
never reach the boundary exactly, which keeps strict-inequality certifications
honest.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc


def van_der_corput(count: int, base: int = 2) -> np.ndarray:
    """First `count` radical-inverse points in (0, 1), base `base`."""
    out = np.empty(count)
    for i in range(count):
        n, denom, x = i + 1, base, 0.0
        while n:
            n, rem = divmod(n, base)
            x += rem / denom
            denom *= base
        out[i] = x
    return out


@lru_cache(maxsize=64)
def signed_interval_pattern(count: int) -> np.ndarray:
    """Points of the punctured interval [-1, 1] \\ {0}, alternating sign.

    Radii follow the base-2 radical-inverse sequence, so the pattern is dense
    near both ends of the interval yet never touches 0 or +-1 exactly.
    """
    radii = van_der_corput(count)
    signs = np.where(np.arange(count) % 2 == 0, 1.0, -1.0)
    pattern = signs * radii
    pattern.setflags(write=False)
    return pattern


@lru_cache(maxsize=64)
def unit_ball_pattern(dimension: int, count: int) -> np.ndarray:
    """`count` low-discrepancy points of the open unit ball, shape (count, d).

    Directions come from inverse-normal-transformed Halton points; radii use
    the final Halton coordinate with the usual r^(1/d) volume correction.
    """
    if dimension == 1:
        return signed_interval_pattern(count).reshape(-1, 1)
    halton = qmc.Halton(d=dimension + 1, scramble=False)
    halton.fast_forward(1)  # skip the all-zero first point
    u = halton.random(count)
    directions = ndtri(np.clip(u[:, :dimension], 1e-12, 1 - 1e-12))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    radii = np.clip(u[:, dimension], 1e-9, 1 - 1e-9) ** (1.0 / dimension)
    pattern = directions / norms * radii[:, None]
    pattern.setflags(write=False)
    return pattern
