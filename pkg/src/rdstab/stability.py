"""Contraction certificates, basin radii, and rate estimators.

Everything here reduces a stability question to an ergodic average along a
realized environment stream: the certificate "contracting on average" is a
negative Birkhoff mean of log-Lipschitz constants with a standard-error
margin, the basin radius comes from the running supremum of log products,
and convergence rates are slopes of log-distance regressions.  The
linearization search shrinks neighbourhoods dyadically until the derivative
norm plus the sampled remainder supremum averages below zero, and the
Furstenberg-Kesten ladder estimates the top growth rate of matrix cocycles
via the subadditive running infimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .environment import OmegaStream, ScalarSystem, simulate_path
from .errors import EstimationError, NumericalError, UsageError, ValidationError
from .sampling import unit_ball_pattern

CERTIFIED = "certified-stable"
NOT_CERTIFIED = "not-certified"
INCONCLUSIVE = "inconclusive"
IMMEDIATE = "immediate-convergence"
VERDICTS = frozenset({CERTIFIED, NOT_CERTIFIED, INCONCLUSIVE, IMMEDIATE})

LIPSCHITZ_METHODS = frozenset({"grid-supremum", "closed-form", "user-supplied"})

UNDERFLOW_FLOOR = 1e-300
MERGE_JUMP_THRESHOLD = 1e-100
MIN_ESTIMATION_HORIZON = 100


# ---------------------------------------------------------------------------
# ergodic averaging
# ---------------------------------------------------------------------------


def batch_means(values, batches: int = 30) -> tuple[float, float]:
    """Mean of a correlated sample with a batch-means standard error.

    The mean uses every sample; the standard error comes from the spread of
    ``batches`` equal-size contiguous batch averages (trailing remainder
    samples are excluded from the batches only).  A constant sequence gets a
    standard error of exactly 0; fewer than two usable batches yield inf.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise UsageError("cannot average an empty sample")
    mean = float(arr.mean())
    nb = min(int(batches), arr.size)
    size = arr.size // nb
    if nb < 2 or size < 1:
        return mean, math.inf
    block = arr[: nb * size].reshape(nb, size).mean(axis=1)
    se = float(block.std(ddof=1) / math.sqrt(nb))
    return mean, se


def _window_codes(states: np.ndarray, num_states: int, window: int, count: int) -> np.ndarray:
    """Encode each length-(window+1) state window as a single integer."""
    if window == 0:
        return states[:count].astype(np.int64)
    codes = np.zeros(count, dtype=np.int64)
    for i in range(window + 1):
        codes = codes * num_states + states[i: i + count]
    return codes


def _decode_window(code: int, num_states: int, window: int) -> tuple[int, ...]:
    digits = []
    for _ in range(window + 1):
        digits.append(int(code % num_states))
        code //= num_states
    return tuple(reversed(digits))


def _mapped_window_values(observable: Callable, stream: OmegaStream, horizon: int,
                          window: int) -> np.ndarray:
    """Evaluate a window observable along the stream, one value per t = 0..horizon.

    The observable is called once per distinct window (finite chains have few)
    and the results are scattered back with a lookup table.
    """
    chain = stream.chain
    states = np.asarray(stream.states(0, horizon + window + 1), dtype=np.int64)
    codes = _window_codes(states, chain.num_states, window, horizon + 1)
    uniq, inverse = np.unique(codes, return_inverse=True)
    table = np.empty(uniq.size)
    for j, code in enumerate(uniq):
        win = _decode_window(int(code), chain.num_states, window)
        value = float(observable(*win))
        if not math.isfinite(value):
            t = int(np.nonzero(inverse == j)[0][0])
            raise EstimationError(
                f"observable is not finite ({value!r}) on window {win}",
                t=t, window=win)
        table[j] = value
    return table[inverse]


def birkhoff_average(observable: Callable, stream: OmegaStream, horizon: int,
                     window: int = 1, batches: int = 30) -> tuple[float, float]:
    """Time average of a state-window observable with a batch-means error bar.

    For an ergodic environment this estimates the stationary expectation of
    ``observable(s_t, ..., s_{t+window})``.

    Args:
        observable: callable taking ``window + 1`` consecutive states.
        stream: realized environment, read from its current position.
        horizon: number of shifts; the average uses ``horizon + 1`` window
            evaluations at t = 0..horizon.
        window: how many steps ahead the observable looks (0 = single state).
        batches: batch count for the standard error.

    Returns:
        ``(mean, stderr)``.

    Raises:
        UsageError: horizon below 100 (too short for a meaningful error bar).
        EstimationError: the observable returns a non-finite value; carries
            the first offending time and window.
    """
    if horizon < MIN_ESTIMATION_HORIZON:
        raise UsageError(f"estimation horizon must be at least {MIN_ESTIMATION_HORIZON}")
    if window < 0:
        raise UsageError("window must be non-negative")
    values = _mapped_window_values(observable, stream, horizon, window)
    return batch_means(values, batches)


def birkhoff_ladder(observable: Callable, stream: OmegaStream, horizon: int,
                    window: int = 1, batches: int = 30) -> list[tuple[int, float, float]]:
    """Running Birkhoff estimates at dyadic horizons, for convergence plots.

    Returns ``(t, mean, stderr)`` rows for t = 1, 2, 4, ..., horizon, each
    using the samples up to that time; short prefixes report an infinite
    standard error rather than pretending to an error bar.
    """
    if horizon < MIN_ESTIMATION_HORIZON:
        raise UsageError(f"estimation horizon must be at least {MIN_ESTIMATION_HORIZON}")
    values = _mapped_window_values(observable, stream, horizon, window)
    ts = _dyadic_ladder(horizon)
    if ts[-1] != horizon:
        ts.append(horizon)
    return [(t, *batch_means(values[: t + 1], batches)) for t in ts]


# ---------------------------------------------------------------------------
# Lipschitz data along a realized stream
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzData:
    """Per-step contraction constants and neighbourhood radii along a stream.

    ``L_values[i]`` bounds the local Lipschitz constant of the step taken
    from time i to time i+1; ``delta_values[i]`` is the neighbourhood radius
    at time i.  Both sequences share a common length and every entry is
    strictly positive and finite.
    """

    L_values: np.ndarray
    delta_values: np.ndarray
    estimation_method: str

    def __post_init__(self):
        L = np.asarray(self.L_values, dtype=np.float64)
        d = np.asarray(self.delta_values, dtype=np.float64)
        if L.ndim != 1 or d.shape != L.shape or L.size == 0:
            raise ValidationError("Lipschitz and radius sequences must be 1-D, "
                                  "nonempty, and of a common length")
        if not (np.all(np.isfinite(L)) and np.all(L > 0.0)):
            raise ValidationError("Lipschitz constants must be strictly positive and finite")
        if not (np.all(np.isfinite(d)) and np.all(d > 0.0)):
            raise ValidationError("radii must be strictly positive and finite")
        if self.estimation_method not in LIPSCHITZ_METHODS:
            raise ValidationError(
                f"unknown estimation method {self.estimation_method!r}; "
                f"expected one of {sorted(LIPSCHITZ_METHODS)}")
        L.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "L_values", L)
        object.__setattr__(self, "delta_values", d)

    def __len__(self) -> int:
        return self.L_values.size


def lipschitz_from_bound(system: ScalarSystem, stream: OmegaStream,
                         horizon: int) -> LipschitzData:
    """Evaluate the system's closed-form Lipschitz bound along a stream."""
    if system.lipschitz_bound is None:
        raise UsageError("system carries no closed-form Lipschitz bound")
    if horizon < 1:
        raise UsageError("horizon must be at least 1")
    w = system.window
    states = stream.states(0, horizon * w + 1)
    L = np.empty(horizon)
    d = np.empty(horizon)
    cache: dict[tuple[int, ...], float] = {}
    for i in range(horizon):
        win = tuple(states[i * w: (i + 1) * w + 1])
        if win not in cache:
            cache[win] = float(system.lipschitz_bound(*win))
        L[i] = cache[win]
        d[i] = system.delta[win[0]]
    return LipschitzData(L, d, "closed-form")


def _derivative_norm(system: ScalarSystem, y, window: tuple[int, ...]) -> float:
    """Spatial derivative norm of the law at y, exact or finite-difference."""
    if system.jacobian is not None:
        return operator_norm(system.jacobian(y, *window))
    s = window[0]
    if system.dimension == 1:
        h = 1e-6 * max(1.0, abs(y))
        lo, hi = system.domain_lower[s], system.domain_upper[s]
        if y - h < lo:
            diff = (system.law(y + h, *window) - system.law(y, *window)) / h
        elif y + h > hi:
            diff = (system.law(y, *window) - system.law(y - h, *window)) / h
        else:
            diff = (system.law(y + h, *window) - system.law(y - h, *window)) / (2 * h)
        return abs(float(diff))
    n = system.dimension
    y = np.asarray(y, dtype=np.float64)
    jac = np.empty((n, n))
    lo, hi = system.domain_lower[s], system.domain_upper[s]
    for j in range(n):
        h = 1e-6 * max(1.0, abs(y[j]))
        up, down = y.copy(), y.copy()
        if y[j] + h > hi[j]:
            up[j], down[j] = y[j], y[j] - h
        elif y[j] - h < lo[j]:
            up[j], down[j] = y[j] + h, y[j]
        else:
            up[j], down[j] = y[j] + h, y[j] - h
        jac[:, j] = (np.asarray(system.law(up, *window)) -
                     np.asarray(system.law(down, *window))) / (up[j] - down[j])
    return operator_norm(jac)


def _grid_sup_derivative(system: ScalarSystem, window: tuple[int, ...],
                         radius: float, grid: int) -> float:
    """Largest derivative norm over a sampled radius-ball (centre included)."""
    s = window[0]
    centre = system.equilibrium(s)
    points = [centre]
    pattern = unit_ball_pattern(system.dimension, grid)
    for row in pattern:
        if system.dimension == 1:
            y = centre + radius * float(row[0])
        else:
            y = centre + radius * row
        if system.contains(y, s):
            points.append(y)
    return max(_derivative_norm(system, y, window) for y in points)


def lipschitz_from_derivative_sup(system: ScalarSystem, stream: OmegaStream,
                                  delta=None, grid: int = 64,
                                  horizon: int = 1000) -> LipschitzData:
    """Per-step Lipschitz constants as sampled suprema of derivative norms.

    A mean-value bound: on a ball where the derivative norm never exceeds L,
    the map is L-Lipschitz.  The supremum is taken over a deterministic
    low-discrepancy grid of ``grid`` points inside each step's radius ball
    intersected with the domain, plus the equilibrium itself; derivatives use
    the system's exact spatial derivative when present and central finite
    differences (relative step 1e-6, one-sided at domain walls) otherwise.

    Args:
        system: system under study.
        stream: realized environment.
        delta: ball radius — a scalar, a per-state array, or None for the
            system's declared radii.
        grid: sample points per ball.
        horizon: number of steps to annotate.

    Returns:
        :class:`LipschitzData` tagged ``grid-supremum`` whose radii echo the
        radii actually used.

    Raises:
        EstimationError: a derivative evaluation failed inside the domain.
    """
    if horizon < 1:
        raise UsageError("horizon must be at least 1")
    if grid < 1:
        raise UsageError("grid must be at least 1")
    ns = system.chain.num_states
    if delta is None:
        radii = system.delta
    else:
        radii = np.broadcast_to(np.asarray(delta, dtype=np.float64), (ns,))
    if np.any(radii <= 0.0):
        raise UsageError("radii must be strictly positive")
    w = system.window
    states = stream.states(0, horizon * w + 1)
    L = np.empty(horizon)
    d = np.empty(horizon)
    cache: dict[tuple[int, ...], float] = {}
    for i in range(horizon):
        win = tuple(states[i * w: (i + 1) * w + 1])
        if win not in cache:
            try:
                cache[win] = _grid_sup_derivative(system, win, float(radii[win[0]]), grid)
            except Exception as exc:
                raise EstimationError(
                    f"derivative evaluation failed on window {win}: {exc}",
                    t=i, window=win) from exc
        L[i] = cache[win]
        d[i] = radii[win[0]]
    return LipschitzData(L, d, "grid-supremum")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares slope of log-distance against time."""

    slope: float
    intercept: float
    stderr: float
    t_start: int
    t_end: int
    count: int


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of a stability estimate or certificate.

    ``rate_c`` is in nats per application of the law; one application spans
    ``steps`` environment steps (composed systems have steps > 1), so the
    per-environment-step rate is rate_c / steps.  The verdict
    ``certified-stable`` is only constructible when rate_c + 3·rate_stderr
    < 0; ``immediate-convergence`` marks paths that land exactly on the
    equilibrium, where no slope exists.
    """

    rate_c: float
    rate_stderr: float
    verdict: str
    gamma_estimate: float | None = None
    slope_fit: SlopeFit | None = None
    steps: int = 1
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValidationError(f"unknown verdict {self.verdict!r}")
        if self.verdict == CERTIFIED and not (self.rate_c + 3.0 * self.rate_stderr < 0.0):
            raise ValidationError(
                "certified-stable requires the rate to be negative at three "
                f"standard errors (rate {self.rate_c!r}, stderr {self.rate_stderr!r})")
        if self.steps < 1:
            raise ValidationError("steps must be positive")

    @property
    def certified(self) -> bool:
        return self.verdict == CERTIFIED

    def to_json_dict(self) -> dict:
        return {
            "rate": self.rate_c,
            "stderr": self.rate_stderr,
            "gamma": self.gamma_estimate,
            "slope": None if self.slope_fit is None else self.slope_fit.slope,
            "slope_stderr": None if self.slope_fit is None else self.slope_fit.stderr,
            "verdict": self.verdict,
            "steps": self.steps,
        }


# ---------------------------------------------------------------------------
# contraction certificate and basin radius
# ---------------------------------------------------------------------------


def certify_contraction(system: ScalarSystem, lipschitz: LipschitzData,
                        margin: float = 3.0) -> StabilityReport:
    """Certify average contraction from per-step Lipschitz constants.

    The rate is the mean of ln L over the realized steps; the verdict is
    certified-stable when the rate is below zero by ``margin`` standard
    errors, not-certified when it is above zero by the same margin, and
    inconclusive when the confidence band straddles zero.  Certification also
    requires the integrability proxies: the empirical means of |ln L| and
    |ln delta| must be finite (they always are for validated data, and both
    are recorded).  When certified, the report carries the basin radius
    computed from the same data.

    Args:
        system: the annotated system (used for step count and bookkeeping).
        lipschitz: per-step constants along a realized stream.
        margin: standard-error multiple; at least 3.

    Returns:
        :class:`StabilityReport` with verdict and, when certified, gamma.
    """
    if margin < 3.0:
        raise UsageError("certification margin below 3 standard errors is not supported")
    logs = np.log(lipschitz.L_values)
    rate, se = batch_means(logs)
    abs_log_L = float(np.mean(np.abs(logs)))
    abs_log_delta = float(np.mean(np.abs(np.log(lipschitz.delta_values))))
    proxies_ok = math.isfinite(abs_log_L) and math.isfinite(abs_log_delta)
    band = margin * se
    gamma = None
    meta = {
        "margin": margin,
        "mean_abs_log_L": abs_log_L,
        "mean_abs_log_delta": abs_log_delta,
        "samples": len(lipschitz),
        "estimation_method": lipschitz.estimation_method,
    }
    if proxies_ok and math.isfinite(rate) and rate + band < 0.0:
        verdict = CERTIFIED
        basin = basin_radius(lipschitz)
        gamma = basin.gamma
        meta["sigma"] = basin.sigma
        meta["basin_stabilized"] = basin.stabilized
    elif math.isfinite(rate) and rate - band > 0.0:
        verdict = NOT_CERTIFIED
    else:
        verdict = INCONCLUSIVE
    return StabilityReport(rate_c=rate, rate_stderr=se, verdict=verdict,
                           gamma_estimate=gamma, steps=system.window, meta=meta)


class BasinRadius(NamedTuple):
    sigma: float
    gamma: float
    stabilized: bool


def basin_log_ratios(lipschitz: LipschitzData) -> np.ndarray:
    """Log of (L_1 ... L_t)/delta_t per t, the sequence whose sup defines sigma."""
    log_products = np.concatenate(([0.0], np.cumsum(np.log(lipschitz.L_values))[:-1]))
    return log_products - np.log(lipschitz.delta_values)


def basin_radius(lipschitz: LipschitzData) -> BasinRadius:
    """Basin radius from the running supremum of Lipschitz products.

    Computes sigma = sup over t of (L_1 ... L_t) / delta_t, with the empty
    product at t = 0 (so the first ratio is 1/delta_0), and gamma = 1/sigma.
    Starting within gamma of the equilibrium, the products can never push an
    orbit past the per-step radii: L_1...L_t · gamma <= delta_t at every
    simulated t, with equality where the supremum is attained.

    Everything runs in log space, so long expanding stretches cannot
    overflow; a diverging supremum comes back as sigma = inf (gamma = 0.0)
    with ``stabilized`` False rather than as an error.  ``stabilized`` is
    True when the running supremum did not increase over the final half of
    the horizon — a heuristic sign that the finite-horizon supremum has
    converged, not a guarantee.
    """
    running = np.maximum.accumulate(basin_log_ratios(lipschitz))
    log_sigma = float(running[-1])
    stabilized = bool(running[-1] == running[len(running) // 2])
    sigma = math.exp(log_sigma) if log_sigma < 709.0 else math.inf
    gamma = math.exp(-log_sigma)
    return BasinRadius(sigma=sigma, gamma=gamma, stabilized=stabilized)


# ---------------------------------------------------------------------------
# convergence-slope verification
# ---------------------------------------------------------------------------


def _ols_slope(ts: np.ndarray, ys: np.ndarray) -> SlopeFit:
    n = ts.size
    t_mean = ts.mean()
    y_mean = ys.mean()
    tt = ts - t_mean
    sxx = float(tt @ tt)
    slope = float(tt @ (ys - y_mean) / sxx)
    intercept = float(y_mean - slope * t_mean)
    if n > 2:
        resid = ys - (intercept + slope * ts)
        se = math.sqrt(float(resid @ resid) / (n - 2) / sxx)
    else:
        se = math.inf
    return SlopeFit(slope=slope, intercept=intercept, stderr=se,
                    t_start=int(ts[0]), t_end=int(ts[-1]), count=n)


def verify_exponential_convergence(system: ScalarSystem, a, stream: OmegaStream,
                                   horizon: int, claimed_rate: float,
                                   slope_tolerance: float = 0.15) -> StabilityReport:
    """Check that an orbit approaches the equilibrium path at a claimed rate.

    Simulates the orbit from ``a``, measures the distance to the equilibrium
    path, and fits a least-squares slope to the log-distances over the final
    80% of usable samples.  Distances below 1e-300 are discarded as float
    underflow.  The verdict is certified-stable when the fitted slope is at
    most claimed_rate + |claimed_rate| * slope_tolerance (convergence may be
    faster than claimed, never materially slower) and the slope itself is
    negative at three standard errors.

    A distance of exactly zero at the start, or a sudden collapse to zero
    from above 1e-100, means the orbit merged with the equilibrium: the
    report says immediate-convergence and carries no slope.  A gradual decay
    through the subnormal range into zero is underflow, not merging, and
    those samples are simply dropped.

    Args:
        system: system with per-state equilibrium values.
        a: initial point inside the starting state's domain.
        stream: realized environment.
        horizon: number of steps to simulate.
        claimed_rate: negative per-application rate to verify against.
        slope_tolerance: relative slack on the claimed rate.

    Returns:
        :class:`StabilityReport` whose rate_c is the fitted slope.
    """
    if not claimed_rate < 0.0:
        raise UsageError("the claimed rate must be negative")
    if horizon < 10:
        raise UsageError("horizon too short for a slope fit")
    path = simulate_path(system, a, stream, horizon)
    w = system.window
    if system.dimension == 1:
        eq = system.fixed_point[path.states[::w]]
        rho = np.abs(path.values - eq)
    else:
        eq = system.fixed_point[path.states[::w]]
        rho = np.linalg.norm(path.values - eq, axis=1)

    zeros = np.nonzero(rho == 0.0)[0]
    merged = False
    if zeros.size:
        first = int(zeros[0])
        merged = first == 0 or rho[first - 1] > MERGE_JUMP_THRESHOLD
    if merged:
        return StabilityReport(
            rate_c=claimed_rate, rate_stderr=0.0, verdict=IMMEDIATE,
            steps=w, meta={"merged_at": int(zeros[0]), "claimed_rate": claimed_rate})

    usable = np.nonzero(rho >= UNDERFLOW_FLOOR)[0]
    if usable.size < 10:
        raise EstimationError("too few usable distances for a slope fit",
                              t=int(usable.size))
    cutoff = usable[usable.size // 5]  # drop the 20% burn-in of usable samples
    keep = usable[usable >= cutoff]
    fit = _ols_slope(keep.astype(np.float64), np.log(rho[keep]))
    within = fit.slope <= claimed_rate + abs(claimed_rate) * slope_tolerance
    negative = fit.slope + 3.0 * fit.stderr < 0.0
    verdict = CERTIFIED if (within and negative) else NOT_CERTIFIED
    return StabilityReport(
        rate_c=fit.slope, rate_stderr=fit.stderr, verdict=verdict,
        slope_fit=fit, steps=w,
        meta={"claimed_rate": claimed_rate, "slope_tolerance": slope_tolerance,
              "usable_samples": int(usable.size)})


# ---------------------------------------------------------------------------
# shrinking-neighbourhood linearization search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearizationData:
    """Derivative norms and sampled remainder suprema along a stream.

    ``F_norms[t]`` is the derivative norm at the equilibrium for step t.
    ``gk_estimates[j, t]`` is the sampled supremum of the linearization
    remainder ratio over the ball of radius delta/ks[j] at step t; rows are
    exactly nonincreasing in j because the sample sets are nested by
    construction (each level adds the sample points of all smaller balls).
    ``Dk = F_norms + gk_estimates`` row-wise.
    """

    ks: tuple[int, ...]
    F_norms: np.ndarray
    gk_estimates: np.ndarray
    Dk: np.ndarray
    delta_values: np.ndarray

    def __post_init__(self):
        if self.gk_estimates.shape != (len(self.ks), self.F_norms.size):
            raise ValidationError("remainder estimates must have one row per shrink level")
        if not np.all(np.isfinite(self.F_norms)) or not np.all(np.isfinite(self.gk_estimates)):
            raise ValidationError("linearization data must be finite")
        if np.any(np.diff(self.gk_estimates, axis=0) > 0.0):
            raise ValidationError("remainder suprema must be nonincreasing in the shrink level")

    def level(self, k: int) -> int:
        return self.ks.index(k)


def _dyadic_ladder(max_k: int) -> list[int]:
    ks = []
    k = 1
    while k <= max_k:
        ks.append(k)
        k *= 2
    return ks


def _remainder_profile(system: ScalarSystem, window: tuple[int, ...],
                       radius: float, ks: Sequence[int], samples: int) -> np.ndarray:
    """Sampled remainder suprema over the nested dyadic balls of one window.

    For each level k the admissible sample set is the union of the scaled
    patterns of every level >= k, all of which lie inside the radius/k ball;
    the per-level suprema are therefore produced by a reverse cumulative max,
    which makes them nonincreasing in k exactly.
    """
    s = window[0]
    x0 = system.equilibrium(window[0])
    base = system.law(x0, *window)
    deriv = system.derivative_at_fp(*window)
    pattern = unit_ball_pattern(system.dimension, samples)
    per_level = np.full(len(ks), -np.inf)
    for j, k in enumerate(ks):
        scale = radius / k
        best = -np.inf
        for row in pattern:
            if system.dimension == 1:
                h = scale * float(row[0])
                x = x0 + h
                if not system.contains(x, s):
                    continue
                ratio = abs(system.law(x, *window) - base - deriv * h) / abs(h)
            else:
                h = scale * row
                x = x0 + h
                if not system.contains(x, s):
                    continue
                image = np.asarray(system.law(x, *window))
                norm_h = float(np.linalg.norm(h))
                ratio = float(np.linalg.norm(image - base - np.asarray(deriv) @ h)) / norm_h
            if ratio > best:
                best = ratio
        per_level[j] = best
    suffix = np.maximum.accumulate(per_level[::-1])[::-1]
    return np.where(np.isfinite(suffix), suffix, 0.0)


def find_contracting_neighborhood(system: ScalarSystem, stream: OmegaStream,
                                  horizon: int, max_k: int = 64,
                                  samples_per_omega: int = 64
                                  ) -> tuple[int | None, StabilityReport, LinearizationData]:
    """Search dyadically shrinking balls for an averaged contraction bound.

    On each ball of radius delta/k the law is Lipschitz with constant at most
    D_k = (derivative norm at the equilibrium) + (supremum of the remainder
    ratio over the ball).  The remainder shrinks with the ball, so if the
    averaged log-derivative-norm is negative, some finite k gives an averaged
    ln D_k below zero.  This estimates g_k by deterministic sampling
    (``samples_per_omega`` points per level, sample sets nested across
    levels) for k = 1, 2, 4, ..., max_k and returns the smallest k whose
    Birkhoff average of ln D_k is negative at three standard errors.

    Args:
        system: must carry ``derivative_at_fp``.
        stream: realized environment.
        horizon: Birkhoff horizon (t = 0..horizon windows).
        max_k: largest shrink level tried.
        samples_per_omega: remainder sample points per level and window.

    Returns:
        ``(k, report, data)``.  ``k`` is None with an inconclusive report
        when no level up to max_k certifies; the report of a successful
        search is certified with the rate for the chosen level and the basin
        radius computed from the D_k sequence on the shrunken radii.
    """
    if system.derivative_at_fp is None:
        raise UsageError("the shrinking-neighbourhood search needs derivative_at_fp")
    if horizon < MIN_ESTIMATION_HORIZON:
        raise UsageError(f"estimation horizon must be at least {MIN_ESTIMATION_HORIZON}")
    if max_k < 1:
        raise UsageError("max_k must be at least 1")
    ks = _dyadic_ladder(max_k)
    chain = stream.chain
    w = system.window
    count = horizon + 1
    states = np.asarray(stream.states(0, horizon * w + w + 1), dtype=np.int64)
    # windows at t = 0..horizon, encoded over their w+1 states
    step_states = np.stack([states[i: i + count * w: w] for i in range(w + 1)])
    codes = np.zeros(count, dtype=np.int64)
    for i in range(w + 1):
        codes = codes * chain.num_states + step_states[i]
    uniq, inverse = np.unique(codes, return_inverse=True)

    f_table = np.empty(uniq.size)
    g_table = np.empty((len(ks), uniq.size))
    for j, code in enumerate(uniq):
        win = _decode_window(int(code), chain.num_states, w)
        f_table[j] = operator_norm(system.derivative_at_fp(*win))
        g_table[:, j] = _remainder_profile(system, win, float(system.delta[win[0]]),
                                           ks, samples_per_omega)
    F_norms = f_table[inverse]
    gk = g_table[:, inverse]
    Dk = F_norms[None, :] + gk
    deltas = system.delta[step_states[0]]
    data = LinearizationData(ks=tuple(ks), F_norms=F_norms, gk_estimates=gk,
                             Dk=Dk, delta_values=deltas)

    f_rate, f_se = batch_means(np.log(np.maximum(F_norms, 1e-300)))
    chosen = None
    rate, se = math.nan, math.nan
    for j, k in enumerate(ks):
        rate, se = batch_means(np.log(Dk[j]))
        if rate + 3.0 * se < 0.0:
            chosen = k
            break
    meta = {"ladder": ks, "derivative_rate": f_rate, "derivative_rate_stderr": f_se,
            "samples_per_omega": samples_per_omega}
    if chosen is None:
        report = StabilityReport(rate_c=rate, rate_stderr=se, verdict=INCONCLUSIVE,
                                 steps=w, meta=meta)
        return None, report, data

    level = ks.index(chosen)
    basin = basin_radius(LipschitzData(Dk[level], deltas / chosen, "grid-supremum"))
    meta["k"] = chosen
    meta["sigma"] = basin.sigma
    meta["basin_stabilized"] = basin.stabilized
    report = StabilityReport(rate_c=rate, rate_stderr=se, verdict=CERTIFIED,
                             gamma_estimate=basin.gamma, steps=w, meta=meta)
    return chosen, report, data


# ---------------------------------------------------------------------------
# Hoelder cocycle check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HolderCheck:
    """Sampled Hoelder constants of an iterated map, one per window start."""

    H_values: np.ndarray
    satisfied: bool
    witness: tuple | None = None
    mean_abs_log_H: float = math.nan

    def __iter__(self):
        return iter((self.H_values, self.satisfied))


def check_holder(system: ScalarSystem, steps: int, exponent: float,
                 stream: OmegaStream, kappa: float, samples: int = 64,
                 horizon: int = 200) -> HolderCheck:
    """Sample Hoelder ratios of the iterated system near the equilibrium path.

    For each window start j <= horizon, points x with distance at most kappa
    from the equilibrium are iterated t = 0..steps times alongside the
    equilibrium path, and the ratios dist(x_t, eq_t) / dist(x_0, eq_0)^exponent
    are collected; H_j is the largest ratio of the window.  The check is
    satisfied when every ratio is finite and positive and the empirical mean
    of |ln H| is finite.  An overflowing or vanishing ratio, or an orbit that
    escapes the domain, makes the check unsatisfied with the witnessing
    (start, sample index, t).

    ``steps = 0`` is allowed and only exercises the identity iterate, whose
    ratio at exponent 1 is exactly 1.
    """
    if steps < 0:
        raise UsageError("steps must be non-negative")
    if exponent <= 0.0 or kappa <= 0.0:
        raise UsageError("exponent and kappa must be positive")
    if horizon < 1:
        raise UsageError("horizon must be at least 1")
    w = system.window
    states = stream.states(0, (horizon + steps) * w + 1)
    pattern = unit_ball_pattern(system.dimension, samples)
    H = np.empty(horizon)
    witness = None
    for j in range(horizon):
        base_state = states[j * w]
        eq0 = system.equilibrium(base_state)
        best = -math.inf
        for idx, row in enumerate(pattern):
            if system.dimension == 1:
                x = eq0 + kappa * float(row[0])
            else:
                x = eq0 + kappa * row
            if not system.contains(x, base_state):
                continue
            rho0 = system.rho(x, eq0)
            denom = rho0 ** exponent
            for t in range(steps + 1):
                eq_t = system.equilibrium(states[(j + t) * w])
                ratio = system.rho(x, eq_t) / denom
                if not math.isfinite(ratio):
                    return HolderCheck(H_values=H[:j], satisfied=False,
                                       witness=(j, idx, t))
                if ratio > best:
                    best = ratio
                if t < steps:
                    win = tuple(states[(j + t) * w: (j + t + 1) * w + 1])
                    try:
                        x = system.law(x, *win)
                    except Exception:
                        return HolderCheck(H_values=H[:j], satisfied=False,
                                           witness=(j, idx, t + 1))
        if not best > 0.0:
            return HolderCheck(H_values=H[:j], satisfied=False, witness=(j, None, None))
        H[j] = best
    mean_abs = float(np.mean(np.abs(np.log(H))))
    return HolderCheck(H_values=H, satisfied=math.isfinite(mean_abs),
                       mean_abs_log_H=mean_abs)


def per_step_rate(report: StabilityReport, exponent: float) -> float:
    """Per-environment-step decay rate implied by a certified composed rate.

    A certificate at rate c per application of an M-step composition, pushed
    through a Hoelder bound with the given exponent, gives decay at
    exponent * c / M nats per environment step.  The standard error scales by
    the same factor.
    """
    if not report.certified:
        raise UsageError("per-step rate requires a certified report")
    if exponent <= 0.0:
        raise UsageError("exponent must be positive")
    return exponent * report.rate_c / report.steps


# ---------------------------------------------------------------------------
# Furstenberg-Kesten ladder for matrix cocycles
# ---------------------------------------------------------------------------


def operator_norm(matrix) -> float:
    """Largest singular value; plain absolute value for scalars."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim == 0:
        return abs(float(arr))
    if arr.ndim == 1 and arr.size == 1:
        return abs(float(arr[0]))
    try:
        return float(np.linalg.norm(arr, 2))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular-value computation failed", payload=arr) from exc


def product_cocycle_from_step(step: Callable) -> Callable:
    """Matrix cocycle from a per-step matrix map.

    ``step(s, sigma)`` gives the matrix applied while moving from state s to
    sigma; the returned callable maps a realized state sequence
    (s_0, ..., s_t) to the t-step product, newest factor on the left.
    """
    def cocycle(states: Sequence[int]) -> np.ndarray:
        if len(states) < 2:
            raise UsageError("a cocycle product needs at least one step")
        product = np.atleast_2d(np.asarray(step(states[0], states[1]), dtype=np.float64))
        for i in range(1, len(states) - 1):
            factor = np.atleast_2d(np.asarray(step(states[i], states[i + 1]), dtype=np.float64))
            product = factor @ product
        return product

    return cocycle


@dataclass(frozen=True)
class FKLadder:
    """Dyadic ladder of top-growth-rate estimates for a matrix cocycle."""

    ts: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray
    running_inf: np.ndarray

    @property
    def final(self) -> float:
        """The ladder's running infimum at the largest horizon."""
        return float(self.running_inf[-1])

    def rows(self):
        for i in range(self.ts.size):
            yield int(self.ts[i]), float(self.estimates[i]), float(self.stderrs[i])


def furstenberg_kesten_ladder(matrix_cocycle: Callable, stream: OmegaStream,
                              t_max: int, replicas: int = 32) -> FKLadder:
    """Estimate the top growth rate of a matrix cocycle by the subadditive ladder.

    For each t on a dyadic ladder up to t_max, Monte Carlo estimates of
    (1/t) E ln ||F_t|| are formed over independent replica streams (operator
    norm = largest singular value).  The sequence t -> E ln ||F_t|| is
    subadditive, so the growth rate is the infimum over t; the ladder's
    running infimum is returned alongside the raw estimates and the final
    running-infimum entry is the rate estimate.

    Args:
        matrix_cocycle: callable mapping a realized state window
            (s_0, ..., s_t) to the t-step product matrix.
        stream: base stream; replica r uses ``stream.substream(r)``.
        t_max: largest product length.
        replicas: Monte Carlo replica count.

    Raises:
        NumericalError: a singular-value computation failed.
    """
    if t_max < 2:
        raise UsageError("t_max must be at least 2")
    if replicas < 2:
        raise UsageError("at least two replicas are needed for an error bar")
    ts = _dyadic_ladder(t_max)
    if ts[-1] != t_max:
        ts.append(t_max)
    log_norms = np.empty((replicas, len(ts)))
    for r in range(replicas):
        replica_states = stream.substream(r).states(0, t_max + 1)
        for j, t in enumerate(ts):
            log_norms[r, j] = math.log(operator_norm(matrix_cocycle(replica_states[: t + 1])))
    scaled = log_norms / np.asarray(ts, dtype=np.float64)
    estimates = scaled.mean(axis=0)
    stderrs = scaled.std(axis=0, ddof=1) / math.sqrt(replicas)
    return FKLadder(ts=np.asarray(ts, dtype=np.int64), estimates=estimates,
                    stderrs=stderrs, running_inf=np.minimum.accumulate(estimates))
