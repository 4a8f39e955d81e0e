import numpy as np
import pytest

from vem import (
    ControlTrajectory,
    GainSet,
    IntegratorOptions,
    StateLayout,
    TimeGrid,
    assemble_ivp,
    evolve,
    summarize,
)
from vem.driver import path_cost, propagate_with_cost, solve_benchmark
from vem.errors import StepFailure, TfCollapse


class TestLayout:
    @pytest.mark.parametrize("method,tf_free", [
        ("third", False), ("third", True), ("second", False), ("second", True),
    ])
    def test_pack_unpack_roundtrip(self, method, tf_free):
        rng = np.random.default_rng(20)
        layout = StateLayout(method, 13, 3, 2, tf_free)
        vec = rng.standard_normal(layout.dimension)
        controls, states, tf = layout.unpack(vec)
        assert controls.shape == (13, 2)
        if method == "second":
            assert states.shape == (13, 3)
        assert np.array_equal(layout.pack(controls, states=states, tf=tf), vec)

    def test_size_mismatch_rejected(self):
        layout = StateLayout("third", 5, 2, 1, False)
        with pytest.raises(ValueError):
            layout.unpack(np.zeros(7))

    def test_dimensions(self, di, brach):
        assert StateLayout("third", 41, 2, 1, False).dimension == 41
        assert StateLayout("second", 41, 2, 1, False).dimension == 123
        assert StateLayout("third", 101, 3, 1, True).dimension == 102
        assert StateLayout("second", 101, 3, 1, True).dimension == 405
        assert assemble_ivp(di.problem, "third", 41, di.gains).dimension == 41
        assert assemble_ivp(di.problem, "second", 41, di.gains).dimension == 123
        assert assemble_ivp(brach.problem, "third", 101, brach.gains).dimension == 102
        assert assemble_ivp(brach.problem, "second", 101, brach.gains).dimension == 405


class TestAssembly:
    def test_unknown_method(self, di):
        with pytest.raises(ValueError):
            assemble_ivp(di.problem, "fourth", 41, di.gains)

    def test_too_few_nodes(self, di):
        with pytest.raises(ValueError):
            assemble_ivp(di.problem, "third", 3, di.gains)

    def test_constraint_gain_required(self, di):
        with pytest.raises(ValueError):
            assemble_ivp(di.problem, "third", 41, GainSet(K=np.array([[0.1]])))

    def test_bad_initial_controls_shape(self, di):
        with pytest.raises(ValueError):
            assemble_ivp(di.problem, "third", 41, di.gains,
                         init_controls=np.zeros((40, 1)))

    def test_collapsed_initial_horizon(self, brach):
        with pytest.raises(TfCollapse):
            assemble_ivp(brach.problem, "third", 11, brach.gains, init_tf=5e-4)

    def test_coupled_method_starts_from_propagated_states(self, di):
        system = assemble_ivp(di.problem, "second", 41, di.gains)
        _, states, _ = system.layout.unpack(system.y0)
        expected = np.stack([1.0 + np.linspace(0, 2, 41), np.ones(41)], axis=1)
        assert np.max(np.abs(states - expected)) <= 1e-9

    def test_assembled_rhs_terminal_time_slot(self, brach):
        # The tf component of the assembled right-hand side must equal the
        # hand-evaluated rate -0.03 of the vertical-drop snapshot.
        system = assemble_ivp(brach.problem, "third", 101, brach.gains)
        rate = system.rhs(0.0, system.y0)
        assert rate[-1] == pytest.approx(-0.03, abs=1e-9)


class TestEvolve:
    def test_zero_span_records_initial_snapshot(self, di):
        system = assemble_ivp(di.problem, "third", 41, di.gains)
        history = evolve(system, 0.0)
        assert len(history.snapshots) == 1
        assert history.termination_reason == "tau_end"
        assert history.final.tau == 0.0
        assert history.final.J == 0.0

    def test_snapshot_selection(self, di):
        system = assemble_ivp(di.problem, "third", 41, di.gains)
        history = evolve(system, 2.0, early_stop=False)
        assert list(history.taus) == [0.0, 1.0, 2.0]

    def test_deterministic_reruns(self, di):
        system = assemble_ivp(di.problem, "third", 41, di.gains)
        h1 = evolve(system, 20.0, snapshot_taus=(0, 5, 20), early_stop=False)
        h2 = evolve(system, 20.0, snapshot_taus=(0, 5, 20), early_stop=False)
        for a, b in zip(h1.snapshots, h2.snapshots):
            assert np.array_equal(a.controls, b.controls)
            assert np.array_equal(a.states, b.states)
            assert a.J == b.J and a.tf == b.tf

    def test_early_stop_reports_convergence(self, di):
        # A smaller step cap lets the relaxation tail resolve deeply
        # enough to cross the residual thresholds before the final time.
        system = assemble_ivp(di.problem, "third", 41, di.gains)
        opts = IntegratorOptions(max_step=5.0)
        history = evolve(system, 300.0, opts=opts, early_stop=True)
        assert history.termination_reason == "converged"
        assert history.final.tau < 300.0
        assert history.final.residuals.optimality_inf <= 1e-6
        assert history.final.residuals.constraint_inf <= 1e-6

    def test_failure_attaches_history(self, di):
        system = assemble_ivp(di.problem, "third", 41, di.gains)
        with pytest.raises(StepFailure) as info:
            evolve(system, 300.0, opts=IntegratorOptions(max_steps=3),
                   early_stop=False)
        history = info.value.history
        assert history.termination_reason == "StepFailure"
        assert len(history.snapshots) >= 1
        assert history.snapshots[0].tau == 0.0


class TestCostEvaluation:
    def test_propagated_cost_at_reference(self, di):
        grid = TimeGrid(41, 0.0, 2.0)
        ctrl = ControlTrajectory.from_values(
            grid, np.stack([di.reference.control(t) for t in grid.times]))
        states, cost = propagate_with_cost(di.problem, ctrl, grid)
        assert cost == pytest.approx(3.25, abs=1e-6)
        assert np.max(np.abs(states.values[-1])) <= 1e-6

    def test_path_cost_matches_propagated_cost(self, di):
        grid = TimeGrid(41, 0.0, 2.0)
        ctrl = ControlTrajectory.from_values(
            grid, np.stack([di.reference.control(t) for t in grid.times]))
        states, cost = propagate_with_cost(di.problem, ctrl, grid)
        along_path = path_cost(di.problem, states, ctrl, grid)
        assert along_path == pytest.approx(cost, abs=1e-6)


class TestSummarize:
    def test_self_comparison_hits_discretization_floor(self, di):
        system = assemble_ivp(
            di.problem, "third", 41, di.gains,
            init_controls=np.stack([di.reference.control(t)
                                    for t in np.linspace(0, 2, 41)]))
        history = evolve(system, 0.0)
        report = summarize(system, history, di.reference)
        assert report.e_J <= 1e-6
        assert np.max(report.e_u) <= 1e-12
        assert np.max(report.e_x) <= 1e-6

    def test_without_reference(self, di):
        system = assemble_ivp(di.problem, "third", 41, di.gains)
        history = evolve(system, 0.0)
        report = summarize(system, history)
        assert report.e_J is None and report.e_u is None and report.e_x is None
        assert report.ivp_dimension == 41

    def test_solve_benchmark_wrapper(self, di):
        history, report = solve_benchmark(di, "third", tau_end=1.0,
                                          snapshot_taus=(0.0, 1.0),
                                          early_stop=False)
        assert report.wall_seconds is not None and report.wall_seconds > 0.0
        assert report.problem == "double-integrator"
        assert report.method == "third"
        assert len(history.snapshots) == 2
