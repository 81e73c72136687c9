"""Tests for the closed-loop simulator and error metrics."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from cluster_sync.analysis import coupling_certificate
from cluster_sync.core import DivergenceError, ValidationError
from cluster_sync.export import write_trajectory_csv
from cluster_sync.gain_synthesis import PlantModel, synthesize_gain
from cluster_sync.graph_core import ClusterPartition, laplacian_of
from cluster_sync.repro import example_plant, uncontrollable_plant
from cluster_sync.simulator import (
    ClosedLoopSystem,
    SimConfig,
    Trajectory,
    closed_loop_matrix,
    cluster_errors,
    control_input,
    error_jacobian,
    error_metrics,
    estimate_decay_rate,
    rk4_step,
    simulate,
    step,
    uncontrollable_mode_trace,
)


def on_leaders(scenario) -> np.ndarray:
    """Agent states equal to their cluster leader."""
    return np.asarray(scenario.leaders)[scenario.partition.labels].copy()


class TestSimConfig:
    """Test integration settings."""

    def test_defaults(self):
        """Test the documented defaults."""
        config = SimConfig()
        assert config.dt == 0.0025
        assert config.n_steps == 4000
        assert config.init_range == ((-10.0, 10.0),)
        assert config.seed == 0

    def test_horizon_must_be_multiple_of_dt(self):
        """Test the step-count check."""
        with pytest.raises(ValidationError, match="not a multiple"):
            SimConfig(dt=0.3, horizon=1.0).n_steps

    def test_per_dimension_ranges(self):
        """Test ranges for each state dimension."""
        config = SimConfig(init_range=((-1, 1), (0, 2)))
        np.testing.assert_array_equal(config.ranges(2), [[-1, 1], [0, 2]])
        np.testing.assert_array_equal(SimConfig().ranges(3), [[-10, 10]] * 3)
        with pytest.raises(ValidationError):
            config.ranges(3)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"dt": 0.0},
            {"horizon": 0.001},
            {"epsilon": -1.0},
            {"record_stride": 0},
            {"init_range": ((1.0, -1.0),)},
            {"divergence_limit": 0.0},
        ],
    )
    def test_invalid_settings(self, kwargs):
        """Test field validation."""
        with pytest.raises(ValidationError):
            SimConfig(**kwargs)


class TestClusterErrors:
    """Test the cluster error metric E_l."""

    PARTITION = ClusterPartition(((0, 1), (2,)), 3)

    def test_on_leaders_is_zero(self):
        """Test that agents on their leaders have zero error."""
        leaders = np.array([[1.0, 0.0], [-1.0, 2.0]])
        agents = leaders[self.PARTITION.labels]
        np.testing.assert_array_equal(cluster_errors(agents, leaders, self.PARTITION), [0.0, 0.0])

    def test_unit_offset(self):
        """Test one agent offset by a unit vector."""
        leaders = np.zeros((2, 2))
        agents = np.zeros((3, 2))
        agents[1] = [0.0, 1.0]
        np.testing.assert_array_equal(cluster_errors(agents, leaders, self.PARTITION), [1.0, 0.0])

    def test_sum_of_norms(self):
        """Test two 3-4-5 offsets in one cluster."""
        leaders = np.array([[1.0, 1.0], [0.0, 0.0]])
        agents = np.array([[4.0, 5.0], [-2.0, -3.0], [0.0, 0.0]])
        np.testing.assert_allclose(cluster_errors(agents, leaders, self.PARTITION), [10.0, 0.0])

    def test_stacked_series(self):
        """Test a (K, N, n) history."""
        leaders = np.zeros((4, 2, 1))
        agents = np.ones((4, 3, 1))
        assert cluster_errors(agents, leaders, self.PARTITION).shape == (4, 2)


class TestControlInput:
    """Test the pinned consensus feedback."""

    def test_zero_on_manifold(self, benchmark, benchmark_gains):
        """Test u_i = 0 when every agent sits on its leader."""
        lap = benchmark.laplacian_at(0.0)
        states = on_leaders(benchmark)
        for i in range(benchmark.n_nodes):
            u = control_input(i, states, benchmark.leaders, lap, benchmark_gains.K)
            np.testing.assert_allclose(u, 0.0, atol=1e-12)

    def test_single_pinned_agent(self):
        """Test u = s - x for c d = 1 and K = 1."""
        lap = laplacian_of(np.zeros((1, 1)), None, 0.0, ClusterPartition.single(1), [1.0], [1.0])
        u = control_input(0, np.array([[0.25]]), np.array([[2.0]]), lap, np.array([[1.0]]))
        np.testing.assert_allclose(u, [1.75])

    def test_three_agent_line(self):
        """Test a hand-expanded three-agent line."""
        adj = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.5, 0.0]])
        lap = laplacian_of(adj, None, 0.0, ClusterPartition.single(3), [1.0, 0.0, 0.0], [3.0])
        x = np.array([[1.0], [4.0], [-2.0]])
        s = np.array([[0.0]])
        K = np.array([[2.0]])
        # u_1 = K (3 * 1 * (0 - 1)); u_2 = K (3 * 2 * (1 - 4)); u_3 = K (3 * 0.5 * (4 + 2))
        assert control_input(0, x, s, lap, K)[0] == pytest.approx(-6.0)
        assert control_input(1, x, s, lap, K)[0] == pytest.approx(-36.0)
        assert control_input(2, x, s, lap, K)[0] == pytest.approx(18.0)

    def test_bad_index(self):
        """Test the agent index check."""
        lap = laplacian_of(np.zeros((1, 1)), None, 0.0, ClusterPartition.single(1), [1.0], [1.0])
        with pytest.raises(ValidationError):
            control_input(3, np.zeros((1, 1)), np.zeros((1, 1)), lap, np.eye(1))


class TestStep:
    """Test the RK4 stepper."""

    def test_zero_dynamics(self):
        """Test that A = 0 without input leaves the state unchanged."""
        y = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(step(y, 0.0, 0.1, np.zeros((3, 3))), y)

    def test_scalar_decay(self):
        """Test x' = -x over one step of 0.1."""
        y = step(np.array([1.0]), 0.0, 0.1, np.array([[-1.0]]))
        assert y[0] == pytest.approx(0.9048374, abs=1e-7)

    def test_callable_rhs(self):
        """Test a right-hand side given as a function."""
        y = step(np.array([0.0]), 0.0, 0.5, lambda t, v: np.array([1.0]))
        assert y[0] == pytest.approx(0.5)

    def test_fourth_order_convergence(self):
        """Test that halving dt cuts the global error about 16 times."""

        def error(h: float) -> float:
            y = np.array([1.0, 0.0])
            A = np.array([[0.0, 1.0], [-1.0, 0.0]])
            for k in range(int(round(1.0 / h))):
                y = rk4_step(lambda t, v: A @ v, k * h, y, h)
            return float(np.linalg.norm(y - [np.cos(1.0), -np.sin(1.0)]))

        ratio = error(0.1) / error(0.05)
        assert 12.0 <= ratio <= 20.0

    def test_divergence(self):
        """Test that a blow-up raises DivergenceError."""
        with pytest.raises(DivergenceError):
            step(np.array([1.0]), 0.0, 1.0, np.array([[100.0]]), divergence_limit=1e3)
        with pytest.raises(DivergenceError):
            step(np.array([np.nan]), 0.0, 0.1, np.zeros((1, 1)))

    def test_dt_must_be_positive(self):
        """Test the dt check."""
        with pytest.raises(ValidationError):
            step(np.zeros(1), 0.0, 0.0, np.zeros((1, 1)))


class TestClosedLoop:
    """Test system matrices."""

    def test_matrix_shape_and_leader_block(self, benchmark, benchmark_gains):
        """Test the stacked agent and leader blocks."""
        lap = benchmark.laplacian_at(0.0)
        M = closed_loop_matrix(benchmark.plant, benchmark_gains.K, lap)
        assert M.shape == (36, 36)
        np.testing.assert_array_equal(M[28:32, 28:32], benchmark.plant.A)
        np.testing.assert_array_equal(M[28:, :28], 0.0)

    def test_error_jacobian_matches_top_left(self, benchmark, benchmark_gains):
        """Test that the agent block is the error generator."""
        lap = benchmark.laplacian_at(0.0)
        M = closed_loop_matrix(benchmark.plant, benchmark_gains.K, lap)
        J = error_jacobian(benchmark.plant, benchmark_gains.K, lap)
        np.testing.assert_allclose(M[:28, :28], J)

    @pytest.mark.parametrize("t", [0.0, 0.015])
    def test_agent_rows_match_control_input(self, benchmark, benchmark_gains, t):
        """Test that each agent block of M y is A x_i + B u_i."""
        lap = benchmark.laplacian_at(t)
        plant = benchmark.plant
        K = benchmark_gains.K
        rng = np.random.default_rng(3)
        x = rng.uniform(-2.0, 2.0, size=(7, 4))
        s = rng.uniform(-2.0, 2.0, size=(2, 4))
        dy = closed_loop_matrix(plant, K, lap) @ np.concatenate([x.ravel(), s.ravel()])
        for i in range(7):
            expected = plant.A @ x[i] + plant.B @ control_input(i, x, s, lap, K)
            np.testing.assert_allclose(dy[4 * i : 4 * i + 4], expected, rtol=1e-10, atol=1e-10)

    def test_segments_are_cached(self, benchmark, benchmark_gains):
        """Test one matrix per phase."""
        system = ClosedLoopSystem(benchmark, benchmark_gains)
        first = system.matrix_at(0.001)
        assert system.matrix_at(0.002) is first
        assert system.matrix_at(0.011) is not first
        assert system.segment_key(0.021) == (0, 0)

    def test_gain_shape_checked(self, benchmark):
        """Test that K must match the plant."""
        gains = synthesize_gain(PlantModel([[0.0]], [[1.0]]))
        with pytest.raises(ValidationError, match="gain shape"):
            ClosedLoopSystem(benchmark, gains)


class TestSimulate:
    """Test full closed-loop runs."""

    def test_row_count_and_times(self, benchmark_trajectory):
        """Test that rows follow horizon, dt and stride."""
        assert benchmark_trajectory.times.size == 201
        assert benchmark_trajectory.times[-1] == pytest.approx(10.0)
        assert benchmark_trajectory.agent_states.shape == (201, 7, 4)
        assert benchmark_trajectory.error_series.shape == (201, 2)

    def test_manifold_invariance(self, benchmark, benchmark_gains):
        """Test that agents started on their leaders stay there."""
        traj = simulate(benchmark, benchmark_gains, initial_states=on_leaders(benchmark))
        assert np.max(traj.total_error) <= 1e-9

    def test_fast_switching_synchronizes(self, benchmark, benchmark_gains):
        """Test E(10) / E(0) <= 1e-3 for every cluster with c one above its threshold."""
        _, thresholds = coupling_certificate(benchmark)
        scenario = benchmark.with_coupling(thresholds.values + 1.0)
        traj = simulate(scenario, benchmark_gains)
        assert np.all(traj.final_ratio() <= 1e-3)
        fit = estimate_decay_rate(traj.times, traj.total_error, (2.0, 6.0))
        assert fit.rate > 0
        assert fit.r_squared > 0.95

    def test_slow_switching_fails(self, benchmark, benchmark_gains):
        """Test that epsilon = 1 keeps a large error."""
        traj = simulate(benchmark.with_epsilon(1.0), benchmark_gains)
        assert traj.total_final_ratio > 0.1

    def test_dt_bound(self, benchmark, benchmark_gains):
        """Test dt <= epsilon * min dwell / 4."""
        with pytest.raises(ValidationError, match="dt"):
            simulate(benchmark.with_epsilon(0.005), benchmark_gains)

    def test_config_epsilon_override(self, benchmark, benchmark_gains):
        """Test that SimConfig.epsilon replaces the scenario value."""
        config = benchmark.sim.with_overrides(epsilon=0.5, horizon=0.5)
        traj = simulate(benchmark, benchmark_gains, config)
        assert traj.epsilon == 0.5

    def test_deterministic_replay(self, benchmark, benchmark_gains, tmp_path: Path):
        """Test identical CSV bytes for the same seed."""
        short = benchmark.with_sim(horizon=1.0)
        a = write_trajectory_csv(simulate(short, benchmark_gains), tmp_path / "a.csv", True)
        b = write_trajectory_csv(simulate(short, benchmark_gains), tmp_path / "b.csv", True)
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_initial_states(self, benchmark, benchmark_gains):
        """Test that a different seed draws different states."""
        short = benchmark.with_sim(horizon=0.05)
        first = simulate(short, benchmark_gains).agent_states[0]
        second = simulate(short.with_sim(seed=1), benchmark_gains).agent_states[0]
        assert not np.allclose(first, second)
        assert np.all(np.abs(first) <= 10.0)

    def test_error_superposition(self, benchmark, benchmark_gains):
        """Test that the error response is linear in the initial offset."""
        short = benchmark.with_sim(horizon=0.5)
        base = on_leaders(short)
        rng = np.random.default_rng(1)
        da = rng.uniform(-1, 1, base.shape)
        db = rng.uniform(-1, 1, base.shape)

        def errors(offset):
            return simulate(short, benchmark_gains, initial_states=base + offset).errors

        combined = errors(da + db)
        np.testing.assert_allclose(combined, errors(da) + errors(db), rtol=1e-9, atol=1e-12)

    def test_initial_states_shape_checked(self, benchmark, benchmark_gains):
        """Test the N x n check."""
        with pytest.raises(ValidationError):
            simulate(benchmark, benchmark_gains, initial_states=np.zeros((3, 4)))

    def test_divergence_is_reported(self, benchmark, benchmark_gains):
        """Test that an exploding mode raises with the last time."""
        scenario = benchmark.with_plant(uncontrollable_plant(), design_plant=example_plant())
        scenario = scenario.with_sim(horizon=2.0, divergence_limit=50.0)
        with pytest.raises(DivergenceError) as exc:
            simulate(scenario, benchmark_gains)
        assert 0.0 <= exc.value.last_time < 2.0


class TestErrorMetrics:
    """Test recomputed error series."""

    def test_matches_recorded_series(self, benchmark_trajectory):
        """Test that recomputation agrees with the stored series."""
        np.testing.assert_allclose(
            error_metrics(benchmark_trajectory), benchmark_trajectory.error_series
        )

    def test_final_ratio_zero_start(self):
        """Test ratios when the error starts at zero."""
        partition = ClusterPartition.single(1)
        traj = Trajectory(
            times=np.array([0.0, 1.0]),
            agent_states=np.zeros((2, 1, 1)),
            leader_states=np.zeros((2, 1, 1)),
            error_series=np.zeros((2, 1)),
            partition=partition,
        )
        assert traj.final_ratio().tolist() == [0.0]
        assert traj.total_final_ratio == 0.0


class TestEstimateDecayRate:
    """Test log-linear decay fits."""

    def test_exact_exponential(self):
        """Test E = exp(-2 t)."""
        t = np.linspace(0.0, 5.0, 101)
        fit = estimate_decay_rate(t, np.exp(-2.0 * t))
        assert fit.rate == pytest.approx(2.0, abs=1e-6)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-9)

    def test_constant_series(self):
        """Test a flat series."""
        t = np.linspace(0.0, 1.0, 11)
        fit = estimate_decay_rate(t, np.full(11, 3.0))
        assert fit.rate == pytest.approx(0.0, abs=1e-12)
        assert fit.r_squared == 1.0

    def test_window(self):
        """Test that only the window is fitted."""
        t = np.linspace(0.0, 4.0, 81)
        series = np.where(t < 2.0, 1.0, np.exp(-(t - 2.0)))
        fit = estimate_decay_rate(t, series, (2.0, 4.0))
        assert fit.rate == pytest.approx(1.0, abs=1e-9)
        assert fit.window == (2.0, 4.0)

    def test_invalid_series(self):
        """Test short windows and non-positive values."""
        t = np.linspace(0.0, 1.0, 11)
        with pytest.raises(ValidationError, match="fewer than two"):
            estimate_decay_rate(t, np.ones(11), (0.5, 0.55))
        with pytest.raises(ValidationError, match="strictly positive"):
            estimate_decay_rate(t, np.zeros(11))
        with pytest.raises(ValidationError, match="lengths differ"):
            estimate_decay_rate(t, np.ones(5))


class TestUncontrollableModeTrace:
    """Test the autonomous-mode comparison."""

    def scenario(self, benchmark):
        scenario = benchmark.with_plant(uncontrollable_plant(), design_plant=example_plant())
        return scenario.with_sim(horizon=1.0)

    def test_mode_follows_exponential(self, benchmark, benchmark_gains):
        """Test v^T e_i(t) = exp(5 t) v^T e_i(0) within 1% on [0, 1]."""
        scenario = self.scenario(benchmark)
        traj = simulate(scenario, benchmark_gains)
        trace = uncontrollable_mode_trace(traj, [0, 0, 0, 1], 5.0, scenario.plant)
        assert trace.max_relative(1.0) <= 0.01

    def test_zero_projection_stays_zero(self, benchmark, benchmark_gains):
        """Test that v^T e(0) = 0 keeps the projection at zero."""
        scenario = self.scenario(benchmark)
        rng = np.random.default_rng(2)
        x0 = rng.uniform(-1, 1, (7, 4))
        x0[:, 3] = 0.0
        traj = simulate(scenario, benchmark_gains, initial_states=x0)
        trace = uncontrollable_mode_trace(traj, [0, 0, 0, 1], 5.0, scenario.plant)
        assert np.max(trace.residual) <= 1e-12

    def test_rejects_non_eigenpair(self, benchmark_trajectory):
        """Test that (v, lambda) must be a left eigenpair."""
        with pytest.raises(ValidationError, match="left eigenpair"):
            uncontrollable_mode_trace(benchmark_trajectory, [0, 0, 0, 1], 5.0, example_plant())
        with pytest.raises(ValidationError):
            uncontrollable_mode_trace(benchmark_trajectory, [0, 0, 0], 5.0, example_plant())
