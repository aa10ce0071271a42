"""Environment chains, seeded state streams, and the systems they drive."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdstab import (
    DomainEscapeError,
    EnvironmentChain,
    IrreducibilityError,
    NumericalError,
    ScalarSystem,
    UsageError,
    ValidationError,
    advance,
    birkhoff_average,
    compose_cocycle,
    simulate_path,
    stationary_distribution,
)


def scaling_system(chain, table, **kwargs):
    """Per-transition linear map x -> table[(s0, s1)] * x with fixed point 0."""
    return ScalarSystem(
        chain=chain, dimension=1,
        law=lambda x, s0, s1: table[(s0, s1)] * x,
        fixed_point=np.zeros(chain.num_states),
        derivative_at_fp=lambda s0, s1: table[(s0, s1)],
        **kwargs)


# ---------------------------------------------------------------------------
# stationary distribution
# ---------------------------------------------------------------------------


class TestStationaryDistribution:
    def test_single_state(self):
        assert stationary_distribution([[1.0]]).tolist() == [1.0]

    def test_symmetric_chain_is_uniform(self):
        pi = stationary_distribution([[0.5, 0.5], [0.5, 0.5]])
        assert pi.tolist() == [0.5, 0.5]

    def test_two_state_hand_oracle(self):
        # pi(0) = P(1,0) / (P(0,1) + P(1,0)) = 0.4 / 0.7
        pi = stationary_distribution([[0.7, 0.3], [0.4, 0.6]])
        assert pi == pytest.approx([4 / 7, 3 / 7], abs=1e-10)

    def test_periodic_chain_converges(self):
        # deterministic 2-cycle: undamped power iteration would oscillate
        pi = stationary_distribution([[0.0, 1.0], [1.0, 0.0]])
        assert pi == pytest.approx([0.5, 0.5], abs=1e-10)

    def test_rejects_non_square(self):
        with pytest.raises(ValidationError, match="square"):
            stationary_distribution([[0.5, 0.5]])

    def test_rejects_negative_entry(self):
        with pytest.raises(ValidationError, match="negative"):
            stationary_distribution([[1.2, -0.2], [0.5, 0.5]])

    def test_rejects_bad_row_sum(self):
        with pytest.raises(ValidationError, match="row 1"):
            stationary_distribution([[0.5, 0.5], [0.6, 0.5]])

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            stationary_distribution([[np.inf, 0.0], [0.5, 0.5]])

    def test_reducible_chain_names_unreachable_state(self):
        with pytest.raises(IrreducibilityError, match="state 1"):
            stationary_distribution([[1.0, 0.0], [0.5, 0.5]])


class TestEnvironmentChain:
    def test_arrays_are_read_only(self, two_state_chain):
        with pytest.raises(ValueError):
            two_state_chain.transition[0, 0] = 0.0
        with pytest.raises(ValueError):
            two_state_chain.stationary[0] = 0.0

    def test_successors(self, two_state_chain):
        assert two_state_chain.successors(0).tolist() == [0, 1]
        ring = EnvironmentChain(transition=[[0.0, 1.0], [1.0, 0.0]], seed=0)
        assert ring.successors(0).tolist() == [1]

    def test_supplied_stationary_is_checked(self):
        with pytest.raises(ValidationError, match="residual"):
            EnvironmentChain(transition=[[0.7, 0.3], [0.4, 0.6]], seed=0,
                             stationary=[0.5, 0.5])

    def test_num_states(self, two_state_chain):
        assert two_state_chain.num_states == 2


# ---------------------------------------------------------------------------
# streams: determinism and shift semantics
# ---------------------------------------------------------------------------


class TestOmegaStream:
    def test_frozen_prefix_seed_42(self, two_state_chain):
        # pinned on first implementation; guards the sampling layout
        assert two_state_chain.stream().states(0, 5) == [1, 0, 1, 0, 0]

    def test_replay_is_bitwise(self, two_state_chain):
        a = two_state_chain.stream(7).states(0, 5000)
        b = two_state_chain.stream(7).states(0, 5000)
        assert a == b

    def test_lazy_growth_matches_bulk_read(self, two_state_chain):
        lazy = two_state_chain.stream(3)
        first = [lazy.state(k) for k in range(100)]
        assert first == two_state_chain.stream(3).states(0, 100)

    def test_replicas_differ_and_reproduce(self, two_state_chain):
        base = two_state_chain.stream(5)
        sub = base.substream(1)
        assert sub.states(0, 200) != base.states(0, 200)
        assert sub.states(0, 200) == two_state_chain.stream(5, replica=1).states(0, 200)

    def test_advance_is_the_shift(self, two_state_chain):
        s = two_state_chain.stream(9)
        shifted = s.advance(3)
        assert shifted.state(0) == s.state(3)
        assert shifted.states(0, 10) == s.states(3, 13)
        assert advance(s, 3).states(0, 10) == shifted.states(0, 10)

    def test_advance_zero_is_identity(self, two_state_chain):
        s = two_state_chain.stream(9)
        assert s.advance(0).states(0, 20) == s.states(0, 20)

    def test_advance_composes(self, two_state_chain):
        s = two_state_chain.stream(9)
        assert s.advance(2).advance(3).states(0, 10) == s.advance(5).states(0, 10)

    def test_negative_positions_rejected(self, two_state_chain):
        s = two_state_chain.stream(1)
        with pytest.raises(UsageError):
            s.state(-1)
        with pytest.raises(UsageError):
            s.advance(-1)

    def test_empirical_state_frequencies(self, two_state_chain):
        # the realized occupation of state 0 sits near pi(0) = 4/7
        mean, se = birkhoff_average(lambda s: 1.0 if s == 0 else 0.0,
                                    two_state_chain.stream(), 1_000_000, window=0)
        assert abs(mean - 4 / 7) <= 3.0 * se

    def test_transition_frequencies(self, two_state_chain):
        states = two_state_chain.stream(17).states(0, 100_001)
        arr = np.asarray(states)
        from0 = arr[:-1] == 0
        went0 = arr[1:][from0] == 0
        freq = went0.mean()
        se = math.sqrt(0.7 * 0.3 / from0.sum())
        assert abs(freq - 0.7) <= 4.0 * se


# ---------------------------------------------------------------------------
# scalar systems and simulation
# ---------------------------------------------------------------------------


class TestScalarSystem:
    def test_rejects_inconsistent_fixed_point(self, two_state_chain):
        with pytest.raises(ValidationError, match="equilibrium"):
            ScalarSystem(chain=two_state_chain, dimension=1,
                         law=lambda x, s0, s1: x + 0.1,
                         fixed_point=[0.0, 0.0])

    def test_rejects_fixed_point_outside_domain(self, two_state_chain):
        with pytest.raises(ValidationError, match="domain"):
            ScalarSystem(chain=two_state_chain, dimension=1,
                         law=lambda x, s0, s1: 0.5 * x,
                         fixed_point=[0.0, 0.0],
                         domain_lower=[0.5, 0.5])

    def test_rejects_nonpositive_delta(self, two_state_chain):
        with pytest.raises(ValidationError, match="delta"):
            scaling_system(two_state_chain, {(0, 0): 0.5, (0, 1): 0.5,
                                             (1, 0): 0.5, (1, 1): 0.5},
                           delta=[1.0, 0.0])

    def test_rejects_domain_escape_at_construction(self, two_state_chain):
        # doubling maps the sampled unit ball outside [-1, 1]
        with pytest.raises(ValidationError, match="outside"):
            ScalarSystem(chain=two_state_chain, dimension=1,
                         law=lambda x, s0, s1: 2.0 * x,
                         fixed_point=[0.0, 0.0],
                         domain_lower=[-1.0, -1.0], domain_upper=[1.0, 1.0])

    def test_equilibrium_and_rho(self, two_state_chain):
        system = scaling_system(two_state_chain,
                                {(0, 0): 0.5, (0, 1): 0.5, (1, 0): 0.5, (1, 1): 0.5})
        assert system.equilibrium(0) == 0.0
        assert system.rho(0.75, -0.25) == 1.0
        assert system.contains(0.3, 0)
        assert system.clip_to_domain(5.0, 1) == 5.0


class TestSimulatePath:
    def test_halving_orbit(self, two_state_chain):
        table = {(0, 0): 0.5, (0, 1): 0.5, (1, 0): 0.5, (1, 1): 0.5}
        path = simulate_path(scaling_system(two_state_chain, table), 1.0,
                             two_state_chain.stream(2), 20)
        assert path.horizon == 20
        assert path.values.tolist() == [0.5 ** t for t in range(21)]

    def test_bitwise_reproducible(self, fixture_market):
        from rdstab import as_scalar_system
        system = as_scalar_system(fixture_market)
        chain = fixture_market.chain
        a = simulate_path(system, 1e-3, chain.stream(4), 500)
        b = simulate_path(system, 1e-3, chain.stream(4), 500)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.states, b.states)

    def test_initial_value_outside_domain(self, two_state_chain):
        system = ScalarSystem(chain=two_state_chain, dimension=1,
                              law=lambda x, s0, s1: 0.5 * x,
                              fixed_point=[0.0, 0.0],
                              domain_lower=[-1.0, -1.0], domain_upper=[1.0, 1.0])
        with pytest.raises(DomainEscapeError) as err:
            simulate_path(system, 1.5, two_state_chain.stream(2), 10)
        assert err.value.t == 0

    def test_escape_time_is_reported(self, two_state_chain):
        # growth by 1.3 from 0.9 leaves [-1.5, 1.5] at t = 2
        system = ScalarSystem(chain=two_state_chain, dimension=1,
                              law=lambda x, s0, s1: 1.3 * x,
                              fixed_point=[0.0, 0.0],
                              domain_lower=[-1.5, -1.5], domain_upper=[1.5, 1.5])
        with pytest.raises(DomainEscapeError) as err:
            simulate_path(system, 0.9, two_state_chain.stream(2), 10)
        assert err.value.t == 2
        assert err.value.value == pytest.approx(0.9 * 1.3 * 1.3)

    def test_negative_horizon_rejected(self, two_state_chain):
        table = {(0, 0): 0.5, (0, 1): 0.5, (1, 0): 0.5, (1, 1): 0.5}
        with pytest.raises(UsageError):
            simulate_path(scaling_system(two_state_chain, table), 1.0,
                          two_state_chain.stream(2), -1)


class TestTrajectoryCsv:
    def test_round_trip(self, two_state_chain):
        table = {(0, 0): 0.9, (0, 1): 0.8, (1, 0): 0.7, (1, 1): 0.6}
        path = simulate_path(scaling_system(two_state_chain, table), 1 / 3,
                             two_state_chain.stream(11), 50)
        text = path.to_csv_string()
        lines = text.strip().splitlines()
        assert lines[0] == "t,state,x_0"
        assert len(lines) == 52
        for t, line in enumerate(lines[1:]):
            t_str, s_str, x_str = line.split(",")
            assert int(t_str) == t
            assert int(s_str) == path.state_at(t)
            assert float(x_str) == path.values[t]  # %.17g round-trips exactly

    def test_to_csv_writes_file(self, two_state_chain, tmp_path):
        table = {(0, 0): 0.9, (0, 1): 0.8, (1, 0): 0.7, (1, 1): 0.6}
        path = simulate_path(scaling_system(two_state_chain, table), 1.0,
                             two_state_chain.stream(11), 5)
        target = tmp_path / "orbit.csv"
        path.to_csv(target)
        assert target.read_text() == path.to_csv_string()


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------


class TestComposeCocycle:
    TABLE = {(0, 0): 0.9, (0, 1): 1.1, (1, 0): 0.8, (1, 1): 0.7}

    def test_single_step_is_identity(self, two_state_chain):
        system = scaling_system(two_state_chain, self.TABLE)
        assert compose_cocycle(system, 1) is system

    def test_rejects_zero_steps(self, two_state_chain):
        system = scaling_system(two_state_chain, self.TABLE)
        with pytest.raises(UsageError):
            compose_cocycle(system, 0)

    def test_window_bookkeeping(self, two_state_chain):
        system = scaling_system(two_state_chain, self.TABLE)
        c3 = compose_cocycle(system, 3)
        assert c3.window == 3
        path = simulate_path(c3, 1.0, two_state_chain.stream(6), 4)
        assert path.states.shape == (13,)
        assert path.state_at(2) == path.states[6]

    def test_composed_path_matches_strided_base_path(self, two_state_chain):
        system = scaling_system(two_state_chain, self.TABLE)
        c3 = compose_cocycle(system, 3)
        base = simulate_path(system, 1.0, two_state_chain.stream(6), 12)
        tri = simulate_path(c3, 1.0, two_state_chain.stream(6), 4)
        assert np.array_equal(tri.values, base.values[::3])

    @settings(max_examples=25, deadline=None)
    @given(m=st.integers(1, 6), k=st.integers(1, 6), seed=st.integers(0, 50),
           x0=st.floats(-2.0, 2.0))
    def test_cocycle_law(self, two_state_chain, m, k, seed, x0):
        """Composing m + k steps equals k steps after m, with the stream shifted."""
        system = scaling_system(two_state_chain, self.TABLE)
        states = two_state_chain.stream(seed).states(0, m + k + 1)
        whole = compose_cocycle(system, m + k).law(x0, *states)
        head = compose_cocycle(system, m).law(x0, *states[: m + 1])
        split = compose_cocycle(system, k).law(head, *states[m:])
        assert split == pytest.approx(whole, rel=1e-12, abs=1e-300)

    def test_derivative_chain_rule(self, two_state_chain):
        system = scaling_system(two_state_chain, self.TABLE)
        states = two_state_chain.stream(8).states(0, 5)
        expected = 1.0
        for i in range(4):
            expected *= self.TABLE[(states[i], states[i + 1])]
        got = compose_cocycle(system, 4).derivative_at_fp(*states)
        assert got == pytest.approx(expected, rel=1e-14)

    def test_lipschitz_bounds_multiply(self, two_state_chain):
        system = ScalarSystem(
            chain=two_state_chain, dimension=1,
            law=lambda x, s0, s1: self.TABLE[(s0, s1)] * x,
            fixed_point=[0.0, 0.0],
            lipschitz_bound=lambda s0, s1: abs(self.TABLE[(s0, s1)]))
        states = two_state_chain.stream(8).states(0, 4)
        expected = np.prod([abs(self.TABLE[(states[i], states[i + 1])]) for i in range(3)])
        assert compose_cocycle(system, 3).lipschitz_bound(*states) == pytest.approx(expected)


class TestStationarityCrossCheck:
    def test_disagreeing_supplied_vector_rejected(self):
        with pytest.raises((ValidationError, NumericalError)):
            EnvironmentChain(transition=[[0.9, 0.1], [0.2, 0.8]], seed=0,
                             stationary=[0.9, 0.1])
