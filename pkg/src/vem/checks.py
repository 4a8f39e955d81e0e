"""Self-contained diagnostic suites behind the ``check`` command.

Each check returns (name, passed, detail).  The oracles here are chosen
to be independent of the production code paths they exercise: forward
transition matrices check the backward sweep, per-interval Gauss
quadrature checks the variational state-rate problem, finite differences
check analytic derivatives, and closed forms check the integrator.
"""

from __future__ import annotations

import numpy as np

from . import second as second_eq
from . import third as third_eq
from .driver import StateLayout
from .numerics import cumulative_from_right, grid_quadrature, solve_dense, spline_build
from .ocp import check_derivatives, validate_problem
from .problems import brachistochrone, double_integrator, tracking_fixture
from .rk45 import IntegratorOptions, rk45_fixed
from .trajectory import ControlTrajectory, TimeGrid, propagate_states, transition_stack

TIGHT = IntegratorOptions(rtol=1e-10, atol=1e-12)

# Abscissae/weights of 5-point Gauss-Legendre on [-1, 1].
_GL_X = np.array([-0.906179845938664, -0.538469310105683, 0.0,
                  0.538469310105683, 0.906179845938664])
_GL_W = np.array([0.236926885056189, 0.478628670499366, 0.568888888888889,
                  0.478628670499366, 0.236926885056189])


def _smooth_controls(grid, m, rng, scale=0.3, waves=2):
    t = (grid.times - grid.t0) / (grid.tf - grid.t0)
    vals = np.zeros((grid.n_nodes, m))
    for k in range(1, waves + 1):
        amp = scale * rng.standard_normal(m)
        vals += np.sin(np.pi * k * t)[:, None] * amp
    return vals


def derivative_checks(seed: int = 0):
    """Validation plus finite-difference agreement on the registry."""
    results = []
    rng = np.random.default_rng(seed)
    for bench in (double_integrator(), brachistochrone()):
        p = bench.problem
        report = validate_problem(p)
        results.append((f"validate[{bench.name}]", report.ok,
                        "; ".join(report.findings) or "clean"))
        worst = 0.0
        for _ in range(10):
            x = p.x0 + rng.uniform(-1.0, 1.0, p.n)
            u = rng.uniform(-1.0, 1.0, p.m)
            t = rng.uniform(p.t0, p.tf)
            worst = max(worst, check_derivatives(p, x, u, t).worst)
        results.append((f"derivatives[{bench.name}]", worst <= 1e-5,
                        f"max discrepancy {worst:.2e}"))
    return results


def _check_integrator_order():
    exact = 0.2  # y' = -2 t y^2, y(0) = 1 has y(2) = 1/(1+4)
    errs, hs = [], []
    for n in (10, 20, 40, 80):
        path = rk45_fixed(lambda t, y: -2.0 * t * y**2, [1.0], (0.0, 2.0), n)
        errs.append(abs(path.y_end[0] - exact))
        hs.append(2.0 / n)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return slope >= 4.0, f"observed order {slope:.2f}"


def _check_spline_cubic():
    nodes = np.linspace(0.0, 2.0, 5)
    s = spline_build(nodes, nodes**3)
    t = np.linspace(0.0, 2.0, 101)
    err = float(np.max(np.abs(s.eval(t) - t**3)))
    return err <= 1e-12, f"cubic reproduction error {err:.2e}"


def _check_quadrature():
    grid = np.linspace(0.0, 2.0, 41)
    samples = grid**2
    total = grid_quadrature(grid, samples)
    tail = cumulative_from_right(grid, samples)
    consistent = abs(tail[0] - total) <= 1e-13 * abs(total) and tail[-1] == 0.0
    return consistent, f"cumulative head/total gap {abs(tail[0] - total):.2e}"


def _check_solve_dense():
    mat = 0.1 * np.array([[8.0 / 3.0, 2.0], [2.0, 2.0]])
    sol, _ = solve_dense(mat, np.array([0.3, 0.1]))
    resid = float(np.max(np.abs(mat @ sol - np.array([0.3, 0.1]))))
    ok = resid <= 1e-10 * 0.3 and np.allclose(sol, [3.0, -2.5], atol=1e-9)
    return ok, f"residual {resid:.2e}"


def _check_pack_roundtrip():
    rng = np.random.default_rng(7)
    for method, tf_free in (("third", False), ("second", True)):
        layout = StateLayout(method, 11, 3, 2, tf_free)
        vec = rng.standard_normal(layout.dimension)
        controls, states, tf = layout.unpack(vec)
        back = layout.pack(controls, states=states, tf=tf)
        if not np.array_equal(back, vec):
            return False, f"{method} layout round trip lost information"
    return True, "exact for both layouts"


def _psi_consistency(bench, rng):
    p = bench.problem
    grid = TimeGrid(21, p.t0, p.tf)
    ctrl = ControlTrajectory.from_values(grid, _smooth_controls(grid, p.m, rng))
    states = propagate_states(p, ctrl, grid, TIGHT)
    stack = transition_stack(p, states, ctrl, TIGHT)
    fwd = stack.forward_matrices()
    worst = 0.0
    for i in range(grid.n_nodes):
        direct = np.linalg.solve(fwd[i].T, fwd[-1].T).T  # Phi(tf, t_i)
        worst = max(worst, float(np.max(np.abs(stack.psi[i] - direct.T))))
    return worst


def _check_psi_consistency(seed=0):
    rng = np.random.default_rng(seed)
    worst = max(_psi_consistency(double_integrator(), rng),
                _psi_consistency(brachistochrone(), rng))
    return worst <= 1e-7, f"backward-vs-forward gap {worst:.2e}"


def _gradient_form_gap(bench, n_nodes, rng):
    p = bench.problem
    grid = TimeGrid(n_nodes, p.t0, p.tf)
    ctrl = ControlTrajectory.from_values(grid, _smooth_controls(grid, p.m, rng))
    states = propagate_states(p, ctrl, grid, TIGHT)
    stack = transition_stack(p, states, ctrl, TIGHT)
    adj = third_eq.control_gradient(p, states, ctrl, stack, form="adjoint")
    quad = third_eq.control_gradient(p, states, ctrl, stack, form="quadrature")
    return float(np.max(np.abs(adj - quad))) / (1.0 + float(np.max(np.abs(adj))))


def _check_gradient_forms(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for bench, n_nodes in ((double_integrator(), 41), (brachistochrone(), 101),
                           (tracking_fixture(), 801)):
        for _ in range(3):
            worst = max(worst, _gradient_form_gap(bench, n_nodes, rng))
    return worst <= 1e-6, f"adjoint-vs-quadrature gap {worst:.2e}"


def _check_stationarity():
    bench = double_integrator()
    p = bench.problem
    grid = TimeGrid(41, 0.0, 2.0)
    ctrl = ControlTrajectory.from_values(
        grid, np.stack([bench.reference.control(t) for t in grid.times]))
    states = propagate_states(p, ctrl, grid, TIGHT)
    stack = transition_stack(p, states, ctrl, TIGHT)
    gu = third_eq.control_gradient(p, states, ctrl, stack)
    mat = third_eq.multiplier_matrix(p, states, ctrl, stack, bench.gains)
    r = third_eq.multiplier_rhs(p, states, ctrl, stack, gu, bench.gains)
    pi = third_eq.solve_multipliers(third_eq.MultiplierSystem(mat, r))
    rate = third_eq.control_rhs(p, states, ctrl, stack, gu, pi, bench.gains)
    worst = float(np.max(np.abs(rate)))
    return worst <= 1e-4, f"control rate at the optimum {worst:.2e}"


def _check_convolution_vs_ivp(seed=0):
    """Gauss-quadrature convolution against the variational problem.

    Uses the double integrator, whose transition kernel is closed-form, so
    the convolution oracle has no shared machinery with the checked route.
    """
    rng = np.random.default_rng(seed)
    bench = double_integrator()
    p = bench.problem
    grid = TimeGrid(41, 0.0, 2.0)
    udot = _smooth_controls(grid, 1, rng, scale=0.5)
    snap = second_eq.SecondEqSnapshot.create(
        grid, np.stack([bench.reference.state(t) for t in grid.times]),
        np.stack([bench.reference.control(t) for t in grid.times]))
    stack = transition_stack(p, snap.state_traj, snap.ctrl_traj, TIGHT)
    via_ivp = second_eq.state_rhs_second(p, snap, stack, udot, bench.gains,
                                         opts=TIGHT, via="ivp")
    spline = spline_build(grid.times, udot)

    worst = 0.0
    for i, ti in enumerate(grid.times):
        acc = np.zeros(2)
        for a, b in zip(grid.times[:i], grid.times[1:i + 1]):
            s = 0.5 * (a + b) + 0.5 * (b - a) * _GL_X
            w = 0.5 * (b - a) * _GL_W
            rate = spline.eval(s)[:, 0]
            acc += np.array([np.sum(w * (ti - s) * rate), np.sum(w * rate)])
        worst = max(worst, float(np.max(np.abs(via_ivp[i] - acc))))
    return worst <= 1e-6, f"convolution-vs-variational gap {worst:.2e}"


def _check_mode_reduction():
    worst = 0.0
    # Analytic optimum of the fixed-horizon benchmark: zero defect, exact
    # initial condition, terminal constraint met exactly.
    bench = double_integrator()
    p = bench.problem
    grid = TimeGrid(41, 0.0, 2.0)
    states = np.stack([bench.reference.state(t) for t in grid.times])
    controls = np.stack([bench.reference.control(t) for t in grid.times])
    xdot = np.stack([p.dynamics(states[i], controls[i], grid.times[i])
                     for i in range(grid.n_nodes)])
    snap = second_eq.SecondEqSnapshot.create(grid, states, controls, xdot=xdot)
    stack = transition_stack(p, snap.state_traj, snap.ctrl_traj, TIGHT)
    systems = {mode: second_eq.multiplier_system_second(p, snap, stack,
                                                        bench.gains, mode)
               for mode in second_eq.MODES}
    g0 = np.asarray(p.constraint(states[-1], grid.tf), dtype=float)
    worst = max(worst, float(np.max(np.abs(
        systems["modified"].r - systems["quasi_feasible"].r))))
    worst = max(worst, float(np.max(np.abs(
        systems["quasi_feasible"].r + bench.gains.K_g @ g0 - systems["feasible"].r))))
    worst = max(worst, float(np.max(np.abs(
        systems["modified"].M - systems["feasible"].M))))

    # Free-horizon benchmark: propagated snapshot with the defect zeroed
    # by construction (the snapshot's derivative field is set to f).
    bench = brachistochrone()
    p = bench.problem
    grid = TimeGrid(31, 0.0, 1.0)
    rng = np.random.default_rng(3)
    ctrl = ControlTrajectory.from_values(grid, _smooth_controls(grid, 1, rng))
    prop = propagate_states(p, ctrl, grid, TIGHT)
    xdot = np.stack([p.dynamics(prop.values[i], ctrl.values[i], grid.times[i])
                     for i in range(grid.n_nodes)])
    snap = second_eq.SecondEqSnapshot.create(grid, prop.values, ctrl.values,
                                             xdot=xdot)
    stack = transition_stack(p, snap.state_traj, snap.ctrl_traj, TIGHT)
    sys_mod = second_eq.multiplier_system_second(p, snap, stack, bench.gains,
                                                 "modified")
    sys_quasi = second_eq.multiplier_system_second(p, snap, stack, bench.gains,
                                                   "quasi_feasible")
    sys_feas = second_eq.multiplier_system_second(p, snap, stack, bench.gains,
                                                  "feasible")
    g0 = np.asarray(p.constraint(prop.values[-1], grid.tf), dtype=float)
    worst = max(worst, float(np.max(np.abs(sys_mod.r - sys_quasi.r))))
    worst = max(worst, float(np.max(np.abs(
        sys_quasi.r + bench.gains.K_g @ g0 - sys_feas.r))))
    worst = max(worst, float(np.max(np.abs(sys_mod.M - sys_quasi.M))))
    return worst <= 1e-9, f"reduction-chain gap {worst:.2e}"


def invariant_checks(seed: int = 0):
    """The cross-module equivalence and consistency properties."""
    results = []
    results.append(("integrator-order",) + _check_integrator_order())
    results.append(("spline-cubic",) + _check_spline_cubic())
    results.append(("quadrature-cumulative",) + _check_quadrature())
    results.append(("dense-solve",) + _check_solve_dense())
    results.append(("pack-roundtrip",) + _check_pack_roundtrip())
    results.append(("psi-forward-backward",) + _check_psi_consistency(seed))
    results.append(("gradient-forms",) + _check_gradient_forms(seed))
    results.append(("stationarity",) + _check_stationarity())
    results.append(("convolution-vs-variational",) + _check_convolution_vs_ivp(seed))
    results.append(("mode-reduction",) + _check_mode_reduction())
    return results


def run_suite(suite: str, seed: int = 0):
    if suite == "derivatives":
        return derivative_checks(seed)
    if suite == "invariants":
        return invariant_checks(seed)
    if suite == "all":
        return derivative_checks(seed) + invariant_checks(seed)
    raise ValueError(f"unknown suite {suite!r}")
