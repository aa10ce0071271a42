#!/usr/bin/env python3
"""Growth-rate ladders for two product cocycles.

First a sanity case whose answer is known in closed form: iid factors 2 and
1/2 with equal probability, whose growth rate is exactly 0.  Then the cocycle
of one-step derivatives of the reference market, whose t -> infinity limit is
the exact extinction rate; the running infimum converging down onto it is the
subadditivity at work.
"""

import numpy as np

from rdstab import (
    EnvironmentChain,
    derivative_at_zero,
    furstenberg_kesten_ladder,
    lyapunov_exponent_exact,
    product_cocycle_from_step,
)
from certify_fixture import build_market  # sibling script


def show(title, ladder, exact):
    print(f"\n== {title} (exact limit {exact:+.6f}) ==")
    print(f"{'t':>6} {'estimate':>12} {'stderr':>10} {'running inf':>12}")
    for (t, est, se), inf in zip(ladder.rows(), ladder.running_inf):
        print(f"{t:>6} {est:>+12.6f} {se:>10.2g} {inf:>+12.6f}")


def main():
    coin = EnvironmentChain(transition=[[0.5, 0.5], [0.5, 0.5]], seed=123)
    ladder = furstenberg_kesten_ladder(
        product_cocycle_from_step(lambda s0, s1: 2.0 if s1 == 0 else 0.5),
        coin.stream(9), t_max=256, replicas=64)
    show("iid doubling/halving coin", ladder, 0.0)

    model = build_market()
    ladder = furstenberg_kesten_ladder(
        product_cocycle_from_step(lambda s0, s1: derivative_at_zero(s0, s1, model)),
        model.chain.stream(9), t_max=1024, replicas=64)
    show("linearized reference market", ladder, lyapunov_exponent_exact(model))


if __name__ == "__main__":
    main()
