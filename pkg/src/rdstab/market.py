"""Two-strategy evolutionary asset market on a finite Markov environment.

K assets pay relative dividends R(s) depending on the environment state.  An
incumbent invests the benchmark (generalized Kelly) strategy lambda*, a rival
invests a per-state strategy lambda, and both reinvest a fraction r of wealth
each period.  The single reduced coordinate is the rival-to-incumbent wealth
ratio x; its law of motion has the fixed point x = 0 (rival extinct), and the
sign of the exact Lyapunov exponent at 0 decides whether deviating from the
benchmark is punished at an exponential rate.

The benchmark solves the fixed-point system

    lambda*(s) = r (P lambda*)(s) + (1 - r) (P R)(s)

which this module solves twice over — by damped-free contraction iteration
and by a direct linear solve — and cross-checks the two.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .environment import EnvironmentChain, ScalarSystem
from .errors import DomainError, NumericalError, UsageError, ValidationError
from .stability import (
    CERTIFIED,
    IMMEDIATE,
    NOT_CERTIFIED,
    StabilityReport,
    verify_exponential_convergence,
)

SIMPLEX_TOL = 1e-12
KELLY_RESIDUAL_TOL = 1e-10
_METHOD_AGREEMENT_TOL = 1e-8
_RANK_THRESHOLD = 1e-10


def _check_simplex_rows(name: str, rows: np.ndarray) -> None:
    if np.any(rows < 0.0) or not np.all(np.isfinite(rows)):
        s, k = np.argwhere((rows < 0.0) | ~np.isfinite(rows))[0]
        raise ValidationError(f"{name}[{s}][{k}] = {rows[s, k]!r} is not a valid weight")
    err = np.abs(rows.sum(axis=1) - 1.0)
    if np.any(err > SIMPLEX_TOL):
        s = int(np.argmax(err))
        raise ValidationError(
            f"{name} row {s} sums to {rows[s].sum():.17g}, not 1 within {SIMPLEX_TOL}")


def contraction_fixed_point(transition: np.ndarray, target: np.ndarray, r: float,
                            tol: float = 1e-14) -> tuple[np.ndarray, int]:
    """Iterate lam <- r*P@lam + (1-r)*target to a sup-norm fixed point.

    Starts from lam = target; each sweep contracts the error by the factor r,
    so the iteration count is about log_r(tol).  Returns the fixed point and
    the number of update sweeps performed.
    """
    lam = target.copy()
    update = (1.0 - r) * target
    for iteration in range(1, 100_000):
        nxt = r * (transition @ lam) + update
        change = float(np.max(np.abs(nxt - lam)))
        lam = nxt
        if change <= tol:
            return lam, iteration
    raise NumericalError("Kelly contraction iteration failed to converge", payload=lam)


def solve_kelly(chain: EnvironmentChain, dividends, r: float,
                method: str = "contraction") -> np.ndarray:
    """Per-state benchmark strategy solving the generalized Kelly fixed point.

    Both solution routes always run: the contraction iteration (geometric
    with factor r, started from the one-period dividend expectation P@R) and
    the columnwise linear solve of (I - rP) lam = (1-r) P@R.  ``method``
    selects which result is returned; the routes cross-check each other and
    a disagreement beyond 1e-8 raises.

    Args:
        chain: driving environment.
        dividends: (S, K) per-state relative dividends, rows in the simplex.
        r: investment rate, strictly between 0 and 1.
        method: "contraction" or "direct".

    Returns:
        (S, K) array of per-state weights, rows in the simplex.

    Raises:
        ValidationError: r outside (0,1) or dividends not simplex rows.
        NumericalError: the two routes disagree (internal inconsistency).
    """
    if not 0.0 < r < 1.0:
        raise ValidationError(f"investment rate must lie strictly in (0,1), got {r!r}")
    if method not in ("contraction", "direct"):
        raise UsageError(f"unknown method {method!r}")
    R = np.asarray(dividends, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != chain.num_states:
        raise ValidationError("dividends must be a (num_states, K) table")
    _check_simplex_rows("dividends", R)
    p = chain.transition
    pr = p @ R
    iterated, _ = contraction_fixed_point(p, pr, r)
    direct = np.linalg.solve(np.eye(chain.num_states) - r * p, (1.0 - r) * pr)
    gap = float(np.max(np.abs(iterated - direct)))
    if gap > _METHOD_AGREEMENT_TOL:
        raise NumericalError(
            f"contraction and direct Kelly solutions disagree by {gap:.3e}",
            payload=(iterated, direct))
    return iterated if method == "contraction" else direct


@dataclass(frozen=True)
class MarketModel:
    """Immutable market instance with the benchmark strategy solved in.

    Args:
        chain: environment chain.
        r: investment rate in (0,1).
        dividends: (S, K) relative dividends, rows in the simplex.
        rival: (S, K) rival strategy, rows in the simplex.
        kelly: the benchmark strategy; computed when omitted.  Supplied
            values are validated against the fixed-point residual either way.

    K is at least 2 (with one asset there is nothing to choose).  zeta(s) is
    the smallest benchmark weight in state s; it controls the crude local
    Lipschitz bound 2/zeta^2 of the wealth-ratio map.
    """

    chain: EnvironmentChain
    r: float
    dividends: np.ndarray
    rival: np.ndarray
    kelly: np.ndarray = None
    zeta: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ValidationError(f"investment rate must lie strictly in (0,1), got {self.r!r}")
        S = self.chain.num_states
        R = np.asarray(self.dividends, dtype=np.float64)
        lam = np.asarray(self.rival, dtype=np.float64)
        if R.ndim != 2 or R.shape[0] != S or R.shape[1] < 2:
            raise ValidationError("dividends must be a (num_states, K >= 2) table")
        if lam.shape != R.shape:
            raise ValidationError("rival strategy must have the same shape as the dividends")
        _check_simplex_rows("dividends", R)
        _check_simplex_rows("rival", lam)
        if self.kelly is None:
            kelly = solve_kelly(self.chain, R, self.r)
        else:
            kelly = np.asarray(self.kelly, dtype=np.float64)
            if kelly.shape != R.shape:
                raise ValidationError("benchmark strategy has the wrong shape")
            _check_simplex_rows("kelly", kelly)
        residual = kelly - self.r * (self.chain.transition @ kelly) \
            - (1.0 - self.r) * (self.chain.transition @ R)
        worst = float(np.max(np.abs(residual)))
        if worst > KELLY_RESIDUAL_TOL:
            raise ValidationError(
                f"benchmark strategy violates its fixed-point equation by {worst:.3e}")
        for arr in (R, lam, kelly):
            arr.setflags(write=False)
        object.__setattr__(self, "dividends", R)
        object.__setattr__(self, "rival", lam)
        object.__setattr__(self, "kelly", kelly)
        object.__setattr__(self, "zeta", kelly.min(axis=1))
        self.zeta.setflags(write=False)
        # plain-float row tuples: the wealth map runs in tight python loops
        mu = self.r * kelly + (1.0 - self.r) * R
        nu = self.r * lam + (1.0 - self.r) * R
        object.__setattr__(self, "_rival_rows", tuple(map(tuple, lam.tolist())))
        object.__setattr__(self, "_kelly_rows", tuple(map(tuple, kelly.tolist())))
        object.__setattr__(self, "_mu_rows", tuple(map(tuple, mu.tolist())))
        object.__setattr__(self, "_nu_rows", tuple(map(tuple, nu.tolist())))

    @property
    def num_assets(self) -> int:
        return self.dividends.shape[1]

    def reinvested(self, state: int) -> np.ndarray:
        """mu(state) = r*kelly(state) + (1-r)*dividends(state)."""
        return np.asarray(self._mu_rows[state])


def wealth_map(x: float, s0: int, s1: int, model: MarketModel) -> float:
    """One step of the rival-to-incumbent wealth ratio.

    Asset k is priced by the incumbent-dominated market at weight
    lambda*_k(s0) plus the rival's contribution lambda_k(s0) x; the payout
    weights mu(s1) (incumbent) and nu(s1) (rival) then divide next-period
    wealth.  x = 0 is a fixed point (an extinct rival stays extinct), and a
    rival playing the benchmark itself holds every ratio fixed.

    Args:
        x: current wealth ratio, nonnegative.
        s0: current environment state.
        s1: next environment state.
        model: market instance.

    Raises:
        DomainError: negative x (the dynamics are only defined on [0, inf)).
    """
    if x < 0.0:
        raise DomainError(f"wealth ratio must be nonnegative, got {x!r}")
    lam = model._rival_rows[s0]
    kel = model._kelly_rows[s0]
    mu = model._mu_rows[s1]
    nu = model._nu_rows[s1]
    num = 0.0
    den = 0.0
    for lk, kk, mk, nk in zip(lam, kel, mu, nu):
        d = lk * x + kk
        num += mk * lk / d
        den += nk * kk / d
    return x * (num / den)


def derivative_at_zero(s0: int, s1: int, model: MarketModel) -> float:
    """Exact derivative of the wealth-ratio map at x = 0 for a state pair.

    Equals sum_k mu_k(s1) * lambda_k(s0) / lambda*_k(s0), evaluated in the
    additive form 1 + sum_k mu_k (lambda_k - lambda*_k)/lambda*_k so that a
    rival playing the benchmark yields exactly 1.0 with no float residue.
    Raises ZeroDivisionError when some benchmark weight is zero (precluded
    whenever the positivity check passes).
    """
    lam = model._rival_rows[s0]
    kel = model._kelly_rows[s0]
    mu = model._mu_rows[s1]
    acc = 0.0
    for lk, kk, mk in zip(lam, kel, mu):
        acc += mk * (lk - kk) / kk
    return 1.0 + acc


def lyapunov_exponent_exact(model: MarketModel) -> float:
    """Exact growth rate of the wealth ratio at 0 under the stationary law.

    Sums pi(s) P(s, t) ln f'(0; s, t) over all positive-probability state
    pairs — no Monte Carlo involved.  Exactly 0.0 when the rival plays the
    benchmark; strictly negative otherwise for any market without redundant
    assets.
    """
    p = model.chain.transition
    pi = model.chain.stationary
    total = 0.0
    for s in range(model.chain.num_states):
        for t in range(model.chain.num_states):
            if p[s, t] > 0.0:
                total += pi[s] * p[s, t] * math.log(derivative_at_zero(s, t, model))
    return total


class InteriorCheck(NamedTuple):
    """Benchmark-positivity check: is every solved weight bounded off zero?"""

    passes: bool
    witness: float
    dividend_witness: float


def check_kelly_positive(model: MarketModel) -> InteriorCheck:
    """Verify the benchmark strategy stays strictly inside the simplex.

    ``witness`` is the smallest benchmark weight over all states and assets;
    on a finite chain the log-integrability of the smallest weight reduces to
    this number being positive.  ``dividend_witness`` is the smallest entry
    of the one-period dividend expectation P@R — a sufficient condition that
    is cheaper to audit from the raw model data.
    """
    witness = float(model.kelly.min())
    pr = model.chain.transition @ model.dividends
    return InteriorCheck(passes=witness > 0.0, witness=witness,
                         dividend_witness=float(pr.min()))


class IndependenceCheck(NamedTuple):
    """Per-state rank check that no asset is redundant."""

    passes: bool
    failing_state: int | None
    min_singular_values: tuple[float, ...]
    reason: str | None
    transitions_positive: bool
    v: float
    V: float


def check_no_redundant_assets(model: MarketModel) -> IndependenceCheck:
    """Check conditional linear independence of the reinvested payouts.

    For each state s, stacks the payout vectors mu(t) = r*kelly(t) +
    (1-r)*dividends(t) over the successors t reachable from s and requires
    full column rank K, judged by the smallest singular value relative to
    the largest at threshold 1e-10.  A state with fewer than K reachable
    successors fails outright (rank K is impossible).  Also reports whether
    every transition probability is strictly positive, with the smallest and
    largest entries v and V.
    """
    p = model.chain.transition
    K = model.num_assets
    min_svs: list[float] = []
    failing = None
    reason = None
    for s in range(model.chain.num_states):
        successors = np.nonzero(p[s] > 0.0)[0]
        if successors.size < K:
            min_svs.append(0.0)
            if failing is None:
                failing = s
                reason = (f"state {s} reaches only {successors.size} states, so the "
                          f"{K} payout vectors cannot be linearly independent")
            continue
        rows = np.stack([model.reinvested(int(t)) for t in successors])
        svs = np.linalg.svd(rows, compute_uv=False)
        min_svs.append(float(svs[-1]))
        if svs[-1] <= _RANK_THRESHOLD * svs[0] and failing is None:
            failing = s
            reason = f"payout vectors reachable from state {s} are rank-deficient"
    return IndependenceCheck(
        passes=failing is None,
        failing_state=failing,
        min_singular_values=tuple(min_svs),
        reason=reason,
        transitions_positive=bool(np.all(p > 0.0)),
        v=float(p.min()),
        V=float(p.max()),
    )


def as_scalar_system(model: MarketModel) -> ScalarSystem:
    """Wrap the wealth-ratio dynamics as a one-dimensional system.

    The system lives on the half-line [0, inf) with equilibrium 0 in every
    state, the exact derivative at 0 attached, unit neighbourhood radii, and
    the closed-form local Lipschitz bound 2/zeta(s0)^2.

    Raises:
        ValidationError: some benchmark weight is zero — the bound and the
            derivative both blow up, so construction is refused.
    """
    interior = check_kelly_positive(model)
    if not interior.passes:
        bad = int(np.argmin(model.kelly.min(axis=1)))
        raise ValidationError(
            f"benchmark weight hits zero in state {bad}; the wealth-ratio "
            "system is not locally Lipschitz there")
    S = model.chain.num_states
    zeta_sq = tuple(float(z) * float(z) for z in model.zeta)

    def law(x, s0, s1):
        return wealth_map(x, s0, s1, model)

    def derivative(s0, s1):
        return derivative_at_zero(s0, s1, model)

    def bound(s0, s1):
        return 2.0 / zeta_sq[s0]

    return ScalarSystem(
        chain=model.chain,
        dimension=1,
        law=law,
        fixed_point=np.zeros(S),
        domain_lower=np.zeros(S),
        domain_upper=np.full(S, np.inf),
        derivative_at_fp=derivative,
        delta=np.ones(S),
        lipschitz_bound=bound,
        window=1,
    )


def _thread_cap() -> int:
    raw = os.environ.get("RDS_STAB_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise UsageError(f"RDS_STAB_THREADS must be an integer, got {raw!r}") from exc
    return max(1, value)


def evolutionary_stability_report(model: MarketModel, a: float, horizon: int,
                                  seeds: Sequence[int],
                                  slope_tolerance: float = 0.15) -> StabilityReport:
    """Verify that a deviating rival is driven out at the exact predicted rate.

    Computes the exact rate c, then checks the measured log-wealth slope
    against it for every seed; the aggregate verdict is certified-stable only
    when every seed's slope is within tolerance of c.  A rival playing the
    benchmark has c = 0 exactly — nothing contracts, and the verdict is
    not-certified without any simulation.  Starting at a = 0 is already the
    equilibrium.

    Seeds run in parallel up to the RDS_STAB_THREADS cap (default: CPU
    count); results are reduced in seed order, so the report is deterministic
    either way.

    Args:
        model: market instance.
        a: initial wealth ratio, nonnegative.
        horizon: steps per seed.
        seeds: seed suite (nonempty).
        slope_tolerance: relative slack passed to the per-seed slope check.

    Returns:
        :class:`StabilityReport` with rate_c equal to the exact rate, the
        worst seed's slope fit, and per-seed rows in ``meta["seeds"]``.
    """
    if a < 0.0:
        raise DomainError(f"initial wealth ratio must be nonnegative, got {a!r}")
    if not seeds:
        raise UsageError("the seed suite must be nonempty")
    c = lyapunov_exponent_exact(model)
    if a == 0.0:
        return StabilityReport(rate_c=c, rate_stderr=0.0, verdict=IMMEDIATE, steps=1,
                               meta={"reason": "started at the extinct-rival equilibrium"})
    if not c < 0.0:
        return StabilityReport(
            rate_c=c, rate_stderr=0.0, verdict=NOT_CERTIFIED, steps=1,
            meta={"reason": "exact rate is not negative; the rival is not "
                            "locally driven out", "seeds": []})
    system = as_scalar_system(model)

    def one_seed(seed: int) -> StabilityReport:
        stream = model.chain.stream(seed)
        return verify_exponential_convergence(system, a, stream, horizon, c,
                                              slope_tolerance=slope_tolerance)

    workers = min(_thread_cap(), len(seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one_seed, seeds))
    else:
        reports = [one_seed(s) for s in seeds]

    rows = []
    worst = None
    all_certified = True
    for seed, rep in zip(seeds, reports):
        rows.append({"seed": int(seed),
                     "slope": rep.slope_fit.slope if rep.slope_fit else None,
                     "slope_stderr": rep.slope_fit.stderr if rep.slope_fit else None,
                     "verdict": rep.verdict})
        all_certified &= rep.verdict == CERTIFIED
        if rep.slope_fit is not None and (
                worst is None or rep.slope_fit.slope > worst.slope):
            worst = rep.slope_fit
    verdict = CERTIFIED if all_certified else NOT_CERTIFIED
    return StabilityReport(rate_c=c, rate_stderr=0.0, verdict=verdict,
                           slope_fit=worst, steps=1,
                           meta={"seeds": rows, "slope_tolerance": slope_tolerance,
                                 "horizon": horizon, "workers": workers})
