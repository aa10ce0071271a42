"""Finite-state random environments and the systems driven by them.

The randomness model is a stationary, irreducible Markov chain on finitely
many states, observed through :class:`OmegaStream`: a lazily grown, seeded
realization of the chain together with an offset implementing the time shift.
Shifted views share one underlying history, so "advance by t, then read k"
and "read t + k" are literally the same memory access.

A :class:`ScalarSystem` bundles a law of motion with its per-state domain,
equilibrium (random fixed point), and optional derivative/Lipschitz
annotations.  :func:`simulate_path` iterates the law along a realized stream,
and :func:`compose_cocycle` builds the M-step composition of a system, which
is again a system (over windows of M+1 consecutive states).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DomainEscapeError,
    IrreducibilityError,
    NumericalError,
    UsageError,
    ValidationError,
)
from .sampling import unit_ball_pattern

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
FIXED_POINT_TOL = 1e-10
_POWER_ITER_TOL = 1e-12
_CROSS_CHECK_TOL = 1e-9
_STATE_CHUNK = 4096


# ---------------------------------------------------------------------------
# stationary distribution and chain validation
# ---------------------------------------------------------------------------


def _check_transition(transition: np.ndarray) -> np.ndarray:
    p = np.asarray(transition, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 1:
        raise ValidationError(f"transition matrix must be square, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValidationError("transition matrix has non-finite entries")
    if np.any(p < 0.0):
        s, sig = np.argwhere(p < 0.0)[0]
        raise ValidationError(f"transition entry ({s},{sig}) is negative")
    row_err = np.abs(p.sum(axis=1) - 1.0)
    if np.any(row_err > ROW_SUM_TOL):
        s = int(np.argmax(row_err))
        raise ValidationError(
            f"row {s} of the transition matrix sums to {p[s].sum():.17g}, "
            f"off by more than {ROW_SUM_TOL}"
        )
    return p


def _check_irreducible(p: np.ndarray) -> None:
    """Reachability closure from every state must be the full state set."""
    n = p.shape[0]
    adj = p > 0.0
    for start in range(n):
        seen = np.zeros(n, dtype=bool)
        seen[start] = True
        frontier = [start]
        while frontier:
            nxt = adj[frontier].any(axis=0) & ~seen
            seen |= nxt
            frontier = list(np.nonzero(nxt)[0])
        if not seen.all():
            missing = int(np.nonzero(~seen)[0][0])
            raise IrreducibilityError(
                f"chain is reducible: state {missing} is not reachable from state {start}"
            )


def stationary_distribution(transition) -> np.ndarray:
    """Stationary row vector of an irreducible stochastic matrix.

    Runs damped power iteration (the damping makes periodic chains converge
    too) down to a residual of 1e-12 on the undamped matrix, then cross-checks
    against a direct linear solve of the balance equations.  Disagreement
    between the two routes raises :class:`NumericalError`.

    Args:
        transition: square row-stochastic matrix.

    Returns:
        Probability vector ``pi`` with ``pi @ transition == pi``.

    Raises:
        ValidationError: rows do not sum to 1 within 1e-12 or entries are
            negative/non-finite.
        IrreducibilityError: some state cannot reach some other state.
        NumericalError: power iteration and the linear solve disagree.
    """
    p = _check_transition(transition)
    _check_irreducible(p)
    n = p.shape[0]

    pi = np.full(n, 1.0 / n)
    half = 0.5 * (p + np.eye(n))
    for _ in range(200_000):
        pi = pi @ half
        pi /= pi.sum()
        if np.max(np.abs(pi @ p - pi)) <= _POWER_ITER_TOL:
            break
    else:
        raise NumericalError(
            f"power iteration did not reach residual {_POWER_ITER_TOL}", payload=pi
        )

    # Independent route: replace one balance equation by the normalization.
    a = p.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        direct = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by checks above
        raise NumericalError("linear solve for the stationary vector failed") from exc
    if np.max(np.abs(pi - direct)) > _CROSS_CHECK_TOL:
        raise NumericalError(
            "power iteration and direct solve disagree on the stationary vector",
            payload=(pi, direct),
        )
    return pi


# ---------------------------------------------------------------------------
# environment chain and shifted state streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvironmentChain:
    """Validated Markov environment: transition matrix, stationary law, seed.

    Construction eagerly checks row-stochasticity (1e-12), the stationarity
    residual (1e-10), and irreducibility via reachability closure; a failed
    check raises instead of producing a partially valid object.
    """

    transition: np.ndarray
    seed: int
    stationary: np.ndarray = field(default=None)  # computed when not supplied

    def __post_init__(self):
        p = _check_transition(self.transition)
        _check_irreducible(p)
        if self.stationary is None:
            pi = stationary_distribution(p)
        else:
            pi = np.asarray(self.stationary, dtype=np.float64)
            if pi.shape != (p.shape[0],):
                raise ValidationError("stationary vector has the wrong shape")
            if abs(pi.sum() - 1.0) > ROW_SUM_TOL or np.any(pi < 0.0):
                raise ValidationError("stationary vector is not a probability vector")
        if np.max(np.abs(pi @ p - pi)) > STATIONARY_TOL:
            raise ValidationError(
                "stationary vector residual exceeds 1e-10 for the given transition"
            )
        p.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "stationary", pi)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    def successors(self, state: int) -> np.ndarray:
        """Indices of states reachable in one step with positive probability."""
        return np.nonzero(self.transition[state] > 0.0)[0]

    def stream(self, seed: int | None = None, replica: int = 0) -> "OmegaStream":
        """Fresh state stream; substreams are keyed by (seed, replica)."""
        return OmegaStream(self, seed=self.seed if seed is None else seed, replica=replica)


class _StreamCore:
    """Shared mutable backing store of a stream and all its shifted views."""

    __slots__ = ("rng", "history", "cum_rows", "cum_init")

    def __init__(self, chain: EnvironmentChain, seed: int, replica: int):
        key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                        np.uint64(replica & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64)
        self.rng = np.random.Generator(np.random.Philox(key=key))
        # Cumulative rows as python tuples: the inner sampling loop is pure
        # python and this shaves off a numpy indexing round-trip per step.
        self.cum_rows = tuple(tuple(np.cumsum(row)) for row in chain.transition)
        self.cum_init = tuple(np.cumsum(chain.stationary))
        self.history: list[int] = []

    def extend_to(self, length: int) -> None:
        while len(self.history) < length:
            draw = max(_STATE_CHUNK, length - len(self.history))
            uniforms = self.rng.random(draw).tolist()
            history = self.history
            if not history:
                u = uniforms.pop(0)
                s = 0
                row = self.cum_init
                while row[s] <= u:
                    s += 1
                history.append(s)
            s = history[-1]
            cum_rows = self.cum_rows
            append = history.append
            for u in uniforms:
                row = cum_rows[s]
                j = 0
                while row[j] <= u:
                    j += 1
                s = j
                append(s)


class OmegaStream:
    """Seeded realization of the environment with shift semantics.

    The first state is drawn from the stationary distribution and each
    successive state from the corresponding transition row, all from one
    counter-based (Philox) generator keyed by ``(seed, replica)`` -- replaying
    with the same key reproduces the identical sequence bitwise.

    ``advance(t)`` returns a view shifted forward by ``t``: reading position
    ``k`` of the view is reading position ``t + k`` of the original.  Views
    share the underlying history, so no state is ever drawn twice.
    """

    __slots__ = ("chain", "seed", "replica", "offset", "_core")

    def __init__(self, chain: EnvironmentChain, seed: int, replica: int = 0,
                 _core: _StreamCore | None = None, _offset: int = 0):
        self.chain = chain
        self.seed = int(seed)
        self.replica = int(replica)
        self.offset = int(_offset)
        self._core = _core if _core is not None else _StreamCore(chain, self.seed, self.replica)

    def state(self, k: int) -> int:
        """Environment state at position k (non-negative) of this stream."""
        if k < 0:
            raise UsageError("stream positions are non-negative")
        idx = self.offset + k
        self._core.extend_to(idx + 1)
        return self._core.history[idx]

    def states(self, start: int, stop: int) -> list[int]:
        """States at positions [start, stop) as a plain list."""
        if start < 0 or stop < start:
            raise UsageError("invalid stream slice")
        self._core.extend_to(self.offset + stop)
        return self._core.history[self.offset + start: self.offset + stop]

    def advance(self, t: int) -> "OmegaStream":
        """Shifted view of the same realization (shared history)."""
        if t < 0:
            raise UsageError("cannot shift a stream backwards")
        return OmegaStream(self.chain, self.seed, self.replica,
                           _core=self._core, _offset=self.offset + t)

    def substream(self, replica: int) -> "OmegaStream":
        """Independent stream with the same seed but a different replica key."""
        return OmegaStream(self.chain, self.seed, replica)


def advance(stream: OmegaStream, t: int) -> OmegaStream:
    """Functional alias for :meth:`OmegaStream.advance`."""
    return stream.advance(t)


# ---------------------------------------------------------------------------
# systems driven by the environment
# ---------------------------------------------------------------------------


def _enumerate_windows(chain: EnvironmentChain, window: int, cap: int = 64) -> list[tuple[int, ...]]:
    """Positive-probability state windows of the given length, depth-first.

    For window 1 this is every positive transition pair (up to `cap`); for
    longer windows a deterministic DFS enumerates up to `cap` admissible
    paths, enough for sampled construction checks.
    """
    out: list[tuple[int, ...]] = []
    succ = [list(np.nonzero(chain.transition[s] > 0.0)[0]) for s in range(chain.num_states)]

    def walk(prefix: list[int]):
        if len(out) >= cap:
            return
        if len(prefix) == window + 1:
            out.append(tuple(int(s) for s in prefix))
            return
        for nxt in succ[prefix[-1]]:
            walk(prefix + [nxt])
            if len(out) >= cap:
                return

    for start in range(chain.num_states):
        walk([start])
        if len(out) >= cap:
            break
    return out


@dataclass
class ScalarSystem:
    """A law of motion over the environment, with its stability annotations.

    Args:
        chain: the driving environment.
        dimension: state-space dimension n.  For n == 1 the law operates on
            plain floats (hot loops stay cheap); for n > 1 on ndarrays of
            shape (n,).
        law: callable ``law(x, *states)`` mapping the current point and a
            window of ``window + 1`` consecutive environment states to the
            next point.  The default window is 1: ``law(x, s_now, s_next)``.
        fixed_point: per-state equilibrium, shape (S,) for n == 1 else (S, n).
        domain_lower / domain_upper: per-state box bounds (half-lines and
            boxes are the supported domain shapes); same shape as
            ``fixed_point``, -inf/+inf allowed.
        derivative_at_fp: optional ``(*states) -> derivative`` of the law at
            the equilibrium of the window's first state (a float for n == 1,
            an (n, n) array otherwise).
        jacobian: optional exact spatial derivative ``(x, *states)``; when
            absent, consumers fall back to central finite differences.
        delta: per-state neighbourhood radius used by the contraction
            machinery, shape (S,); defaults to 1 everywhere.
        lipschitz_bound: optional closed-form bound ``(*states) -> L`` valid
            on the delta-neighbourhood of the equilibrium.
        window: number of environment steps one application consumes.

    Construction verifies, for every admissible state window (all of them for
    window 1, a deterministic sample otherwise), that the law maps the
    equilibrium onto the successor equilibrium within 1e-10, and spot-checks
    that domain points map into the successor domain.
    """

    chain: EnvironmentChain
    dimension: int
    law: Callable
    fixed_point: np.ndarray
    domain_lower: np.ndarray = None
    domain_upper: np.ndarray = None
    derivative_at_fp: Callable | None = None
    jacobian: Callable | None = None
    delta: np.ndarray = None
    lipschitz_bound: Callable | None = None
    window: int = 1

    def __post_init__(self):
        n, ns = int(self.dimension), self.chain.num_states
        if n < 1:
            raise ValidationError("dimension must be at least 1")
        shape = (ns,) if n == 1 else (ns, n)
        self.fixed_point = np.asarray(self.fixed_point, dtype=np.float64).reshape(shape)
        if self.domain_lower is None:
            self.domain_lower = np.full(shape, -np.inf)
        if self.domain_upper is None:
            self.domain_upper = np.full(shape, np.inf)
        self.domain_lower = np.broadcast_to(
            np.asarray(self.domain_lower, dtype=np.float64), shape).copy()
        self.domain_upper = np.broadcast_to(
            np.asarray(self.domain_upper, dtype=np.float64), shape).copy()
        if self.delta is None:
            self.delta = np.ones(ns)
        self.delta = np.broadcast_to(np.asarray(self.delta, dtype=np.float64), (ns,)).copy()
        if np.any(self.delta <= 0.0) or not np.all(np.isfinite(self.delta)):
            raise ValidationError("delta radii must be positive and finite")
        if np.any(self.domain_lower > self.domain_upper):
            raise ValidationError("domain_lower exceeds domain_upper somewhere")
        for s in range(ns):
            if not self.contains(self.equilibrium(s), s):
                raise ValidationError(f"fixed point of state {s} lies outside its domain")
        if self.window < 1:
            raise ValidationError("window must be at least 1")
        self._check_fixed_point_consistency()
        self._check_domain_mapping()

    # -- geometry helpers --------------------------------------------------

    def equilibrium(self, state: int):
        """Equilibrium value for a state (float when n == 1)."""
        fp = self.fixed_point[state]
        return float(fp) if self.dimension == 1 else fp

    def contains(self, x, state: int) -> bool:
        lo, hi = self.domain_lower[state], self.domain_upper[state]
        if self.dimension == 1:
            return lo <= x <= hi
        return bool(np.all(lo <= x) and np.all(x <= hi))

    def rho(self, a, b) -> float:
        """Distance between two points (Euclidean; plain |a-b| for n == 1)."""
        if self.dimension == 1:
            return abs(a - b)
        return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))

    def clip_to_domain(self, x, state: int):
        if self.dimension == 1:
            return min(max(x, self.domain_lower[state]), self.domain_upper[state])
        return np.clip(x, self.domain_lower[state], self.domain_upper[state])

    # -- construction-time checks -----------------------------------------

    def _check_fixed_point_consistency(self) -> None:
        for win in _enumerate_windows(self.chain, self.window):
            start, end = win[0], win[-1]
            image = self.law(self.equilibrium(start), *win)
            residual = self.rho(image, self.equilibrium(end))
            if not math.isfinite(residual) or residual > FIXED_POINT_TOL:
                raise ValidationError(
                    f"law does not map the equilibrium of state {start} onto the "
                    f"equilibrium of state {end} along window {win} "
                    f"(residual {residual:.3e} > {FIXED_POINT_TOL})"
                )

    def _check_domain_mapping(self, points_per_window: int = 8, slack: float = 1e-9) -> None:
        pattern = unit_ball_pattern(self.dimension, points_per_window)
        for win in _enumerate_windows(self.chain, self.window, cap=16):
            start, end = win[0], win[-1]
            centre = self.equilibrium(start)
            radius = min(float(self.delta[start]), 1.0)
            for row in pattern:
                if self.dimension == 1:
                    x = self.clip_to_domain(centre + radius * float(row[0]), start)
                else:
                    x = self.clip_to_domain(centre + radius * row, start)
                y = self.law(x, *win)
                lo, hi = self.domain_lower[end], self.domain_upper[end]
                ok = (lo - slack <= y <= hi + slack) if self.dimension == 1 else bool(
                    np.all(lo - slack <= y) and np.all(y <= hi + slack))
                if not ok:
                    raise ValidationError(
                        f"law maps sampled domain point {x!r} of state {start} outside "
                        f"the domain of state {end} along window {win}"
                    )


@dataclass(frozen=True)
class Trajectory:
    """A simulated orbit together with the environment states that drove it.

    ``values[t]`` is the iterate after t applications of the law and
    ``states`` holds the raw environment states consumed (``t * window + 1``
    entries for a horizon-t run).
    """

    values: np.ndarray
    states: np.ndarray
    window: int = 1

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    def state_at(self, t: int) -> int:
        return int(self.states[t * self.window])

    def to_csv(self, path_or_file) -> None:
        """Write ``t,state,x_0,...`` rows with round-trip float formatting."""
        values = self.values
        ncols = 1 if values.ndim == 1 else values.shape[1]
        header = ["t", "state"] + [f"x_{i}" for i in range(ncols)]
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        handle = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for t in range(values.shape[0]):
                row = values[t: t + 1] if values.ndim == 1 else values[t]
                writer.writerow([t, self.state_at(t)] + [f"{v:.17g}" for v in np.atleast_1d(row)])
        finally:
            if own:
                handle.close()

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def simulate_path(system: ScalarSystem, a, stream: OmegaStream, horizon: int) -> Trajectory:
    """Iterate the system from ``a`` along a realized environment stream.

    Args:
        system: the system to iterate.
        a: initial point; must lie in the domain of the stream's first state.
        stream: realized environment (consumed from its current position).
        horizon: number of applications of the law.

    Returns:
        :class:`Trajectory` of ``horizon + 1`` values.  Bitwise reproducible
        for identical (seed, replica, shift) streams.

    Raises:
        DomainEscapeError: an iterate (or ``a`` itself) leaves the declared
            per-state domain; the error carries the first offending time.
    """
    if horizon < 0:
        raise UsageError("horizon must be non-negative")
    w = system.window
    states = stream.states(0, horizon * w + 1)
    s0 = states[0]
    if system.dimension == 1:
        x = float(a)
        lo = system.domain_lower.tolist()
        hi = system.domain_upper.tolist()
        if not (lo[s0] <= x <= hi[s0]):
            raise DomainEscapeError(
                f"initial value {x!r} outside the domain of state {s0}", t=0,
                state=s0, value=x)
        law = system.law
        values = [x]
        append = values.append
        for t in range(horizon):
            win = states[t * w: (t + 1) * w + 1]
            x = law(x, *win)
            s = win[-1]
            if not (lo[s] <= x <= hi[s]):
                raise DomainEscapeError(
                    f"iterate left the domain of state {s} at time {t + 1}: {x!r}",
                    t=t + 1, state=s, value=x)
            append(x)
        return Trajectory(np.asarray(values), np.asarray(states, dtype=np.int64), window=w)

    x = np.array(a, dtype=np.float64).reshape(system.dimension)
    if not system.contains(x, s0):
        raise DomainEscapeError(
            f"initial value {x!r} outside the domain of state {s0}", t=0, state=s0, value=x)
    values = np.empty((horizon + 1, system.dimension))
    values[0] = x
    for t in range(horizon):
        win = states[t * w: (t + 1) * w + 1]
        x = np.asarray(system.law(x, *win), dtype=np.float64).reshape(system.dimension)
        s = win[-1]
        if not system.contains(x, s):
            raise DomainEscapeError(
                f"iterate left the domain of state {s} at time {t + 1}: {x!r}",
                t=t + 1, state=s, value=x)
        values[t + 1] = x
    return Trajectory(values, np.asarray(states, dtype=np.int64), window=w)


def compose_cocycle(system: ScalarSystem, steps: int) -> ScalarSystem:
    """The ``steps``-fold composition of a system, as a system.

    One application of the returned system advances the base system by
    ``steps`` applications and consumes a window of ``steps * window + 1``
    environment states.  Derivatives compose by the chain rule and Lipschitz
    bounds multiply along the window when the base system carries them.
    Composition obeys the cocycle law: composing m+k steps equals composing k
    steps after m steps with the stream advanced by m.
    """
    if steps < 1:
        raise UsageError("steps must be at least 1")
    if steps == 1:
        return system
    w = system.window
    base_law = system.law
    n = system.dimension

    def law(x, *states):
        for i in range(steps):
            x = base_law(x, *states[i * w: (i + 1) * w + 1])
        return x

    derivative = None
    if system.derivative_at_fp is not None:
        base_deriv = system.derivative_at_fp

        if n == 1:
            def derivative(*states):
                out = 1.0
                for i in range(steps):
                    out = base_deriv(*states[i * w: (i + 1) * w + 1]) * out
                return out
        else:
            def derivative(*states):
                out = np.eye(n)
                for i in range(steps):
                    out = np.asarray(base_deriv(*states[i * w: (i + 1) * w + 1])) @ out
                return out

    bound = None
    if system.lipschitz_bound is not None:
        base_bound = system.lipschitz_bound

        def bound(*states):
            out = 1.0
            for i in range(steps):
                out *= base_bound(*states[i * w: (i + 1) * w + 1])
            return out

    return ScalarSystem(
        chain=system.chain,
        dimension=n,
        law=law,
        fixed_point=system.fixed_point,
        domain_lower=system.domain_lower,
        domain_upper=system.domain_upper,
        derivative_at_fp=derivative,
        jacobian=None,
        delta=system.delta,
        lipschitz_bound=bound,
        window=steps * w,
    )
