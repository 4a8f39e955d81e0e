"""Assembly and integration of the evolution initial-value problem.

The physical-time axis is discretized once (N nodes on normalized time);
the resulting finite-dimensional system is integrated along the virtual
evolution time tau.  The evolving vector holds node controls (control-only
method) or node states and controls (coupled method), plus the terminal
time when it is free.  Multipliers, residuals, and the performance index
are algebraic functions of the snapshot and are never integrated.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import second as second_eq
from . import third as third_eq
from .errors import TfCollapse, VemError
from .ocp import GainSet, OcpProblem
from .rk45 import IntegratorOptions, rk45_integrate
from .trajectory import (
    ControlTrajectory,
    StateTrajectory,
    TimeGrid,
    TransitionStack,
    propagate_states,
    transition_stack,
)

METHODS = ("second", "third")
DEFAULT_TAU_END = 300.0
DEFAULT_SNAPSHOTS = (0.0, 1.0, 5.0, 10.0, 30.0, 100.0, 300.0)

# Early-termination thresholds on the optimality residuals.
OPTIMALITY_RTOL = 1e-6
CONSTRAINT_TOL = 1e-6
TRANSVERSALITY_TOL = 1e-6


@dataclass(frozen=True)
class StateLayout:
    """Flat-vector layout of the evolving quantities."""

    method: str
    n_nodes: int
    n_states: int
    n_controls: int
    tf_free: bool

    @property
    def dimension(self) -> int:
        size = self.n_nodes * self.n_controls
        if self.method == "second":
            size += self.n_nodes * self.n_states
        if self.tf_free:
            size += 1
        return size

    def pack(self, controls, states=None, tf=None) -> np.ndarray:
        parts = []
        if self.method == "second":
            if states is None:
                raise ValueError("coupled layout requires node states")
            parts.append(np.asarray(states, dtype=float).ravel())
        parts.append(np.asarray(controls, dtype=float).ravel())
        if self.tf_free:
            if tf is None:
                raise ValueError("free-horizon layout requires tf")
            parts.append(np.array([float(tf)]))
        vec = np.concatenate(parts)
        if vec.size != self.dimension:
            raise ValueError(f"packed size {vec.size} != layout dimension {self.dimension}")
        return vec

    def unpack(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.dimension:
            raise ValueError(f"vector size {vec.size} != layout dimension {self.dimension}")
        pos = 0
        states = None
        if self.method == "second":
            size = self.n_nodes * self.n_states
            states = vec[pos:pos + size].reshape(self.n_nodes, self.n_states)
            pos += size
        size = self.n_nodes * self.n_controls
        controls = vec[pos:pos + size].reshape(self.n_nodes, self.n_controls)
        pos += size
        tf = float(vec[pos]) if self.tf_free else None
        return controls, states, tf


@dataclass
class SnapshotRecord:
    """Full diagnostic record of the solution at one tau value."""

    tau: float
    times: np.ndarray           # (N,)
    controls: np.ndarray        # (N, m)
    states: np.ndarray          # (N, n)
    costates: np.ndarray        # (N, n)
    J: float
    pi: Optional[np.ndarray]
    tf: float
    residuals: third_eq.Residuals


@dataclass
class EvolutionHistory:
    """Snapshots along tau plus the termination reason."""

    snapshots: List[SnapshotRecord] = field(default_factory=list)
    termination_reason: str = "tau_end"

    @property
    def taus(self) -> np.ndarray:
        return np.array([s.tau for s in self.snapshots])

    @property
    def final(self) -> SnapshotRecord:
        return self.snapshots[-1]

    def costs(self) -> np.ndarray:
        return np.array([s.J for s in self.snapshots])

    def tf_values(self) -> np.ndarray:
        return np.array([s.tf for s in self.snapshots])


@dataclass
class SolveReport:
    """Node errors against a reference plus run metadata."""

    problem: str
    method: str
    ivp_dimension: int
    J: float
    tf: float
    pi: Optional[np.ndarray]
    residuals: third_eq.Residuals
    termination_reason: str
    e_J: Optional[float] = None
    e_u: Optional[np.ndarray] = None
    e_x: Optional[np.ndarray] = None
    wall_seconds: Optional[float] = None


def propagate_with_cost(problem: OcpProblem, ctrl: ControlTrajectory,
                        grid: TimeGrid, opts: Optional[IntegratorOptions] = None):
    """Propagate states and the running-cost integral in one sweep.

    Returns (StateTrajectory, J) with J the full performance index
    including the terminal term.
    """
    n = problem.n

    def field_fn(t, z):
        x = z[:n]
        u = ctrl.eval(t)
        return np.concatenate([
            np.asarray(problem.dynamics(x, u, t), dtype=float),
            [float(problem.running_cost(x, u, t))],
        ])

    z0 = np.concatenate([problem.x0, [0.0]])
    path = rk45_integrate(field_fn, z0, (grid.t0, grid.tf), opts)
    nodes = path.eval(grid.times)
    values = nodes[:, :n]
    values[0] = problem.x0
    x_end = values[-1]
    cost = float(problem.terminal_cost(x_end, grid.tf)) + float(path.y_end[n])
    states = StateTrajectory(grid, values, lambda t: path.eval(t)[..., :n])
    return states, cost


def path_cost(problem: OcpProblem, states: StateTrajectory,
              ctrl: ControlTrajectory, grid: TimeGrid,
              opts: Optional[IntegratorOptions] = None) -> float:
    """Performance index along an existing state path (no re-propagation)."""

    def field_fn(t, z):
        return np.array([float(problem.running_cost(
            states.eval(t), ctrl.eval(t), t))])

    path = rk45_integrate(field_fn, np.zeros(1), (grid.t0, grid.tf), opts)
    return float(problem.terminal_cost(states.values[-1], grid.tf)) + float(path.y_end[0])


class EvolutionSystem:
    """The assembled tau-IVP: layout, right-hand side, snapshot pipeline."""

    def __init__(self, problem: OcpProblem, gains: GainSet, method: str,
                 n_nodes: int, opts: IntegratorOptions, y0: np.ndarray,
                 mode: str = "quasi_feasible"):
        self.problem = problem
        self.gains = gains
        self.method = method
        self.mode = mode
        self.opts = opts
        self.layout = StateLayout(method, n_nodes, problem.n, problem.m,
                                  problem.tf_free)
        self.y0 = y0

    @property
    def dimension(self) -> int:
        return self.layout.dimension

    def _grid(self, tf: Optional[float]) -> TimeGrid:
        horizon = tf if tf is not None else self.problem.tf
        if horizon - self.problem.t0 < third_eq.TF_MIN_WIDTH:
            raise TfCollapse(
                f"horizon width {horizon - self.problem.t0:.3e} below "
                f"{third_eq.TF_MIN_WIDTH:g}")
        return TimeGrid(self.layout.n_nodes, self.problem.t0, horizon)

    def _solve_pi(self, states, ctrl, stack, gu):
        # Control-only method: always the quasi-feasible multiplier system
        # (snapshots satisfy the dynamics by construction, the terminal
        # constraint only asymptotically).
        if self.problem.q == 0:
            return None
        mat = third_eq.multiplier_matrix(self.problem, states, ctrl, stack,
                                         self.gains)
        r = third_eq.multiplier_rhs(self.problem, states, ctrl, stack, gu,
                                    self.gains, mode="quasi_feasible")
        return third_eq.solve_multipliers(
            third_eq.MultiplierSystem(mat, r, "quasi_feasible"))

    # -- control-only pipeline -------------------------------------------
    def _pipeline_third(self, vec):
        controls, _, tf = self.layout.unpack(vec)
        grid = self._grid(tf)
        ctrl = ControlTrajectory.from_values(grid, controls)
        states = propagate_states(self.problem, ctrl, grid, self.opts)
        stack = transition_stack(self.problem, states, ctrl, self.opts)
        gu = third_eq.control_gradient(self.problem, states, ctrl, stack)
        pi = self._solve_pi(states, ctrl, stack, gu)
        return grid, ctrl, states, stack, gu, pi

    def _rhs_third(self, tau, vec):
        grid, ctrl, states, stack, gu, pi = self._pipeline_third(vec)
        udot = third_eq.control_rhs(self.problem, states, ctrl, stack, gu,
                                    pi, self.gains)
        tf_dot = None
        if self.problem.tf_free:
            tf_dot = third_eq.tf_rhs(self.problem, states, ctrl, pi, self.gains)
        return self.layout.pack(udot, tf=tf_dot) if self.problem.tf_free \
            else self.layout.pack(udot)

    # -- coupled pipeline -------------------------------------------------
    def _pipeline_second(self, vec):
        controls, states_nodes, tf = self.layout.unpack(vec)
        grid = self._grid(tf)
        snap = second_eq.SecondEqSnapshot.create(grid, states_nodes, controls)
        stack = transition_stack(self.problem, snap.state_traj, snap.ctrl_traj,
                                 self.opts)
        gu = third_eq.control_gradient(self.problem, snap.state_traj,
                                       snap.ctrl_traj, stack)
        pi = None
        if self.problem.q > 0:
            pi = second_eq.multiplier_second(self.problem, snap, stack,
                                             self.gains, self.mode)
        return grid, snap, stack, gu, pi

    def _rhs_second(self, tau, vec):
        grid, snap, stack, gu, pi = self._pipeline_second(vec)
        udot = third_eq.control_rhs(self.problem, snap.state_traj,
                                    snap.ctrl_traj, stack, gu, pi, self.gains)
        wdot = second_eq.state_rhs_second(self.problem, snap, stack, udot,
                                          self.gains, self.mode, self.opts)
        if not self.problem.tf_free:
            return self.layout.pack(udot, states=wdot)
        tf_dot = second_eq.tf_rhs_second(self.problem, snap, pi,
                                         self.gains, self.mode)
        # Nodes sit on normalized time, so a moving horizon drags their
        # physical positions; the stored state and control functions pick
        # up the moving-grid advection rate on top of the variational
        # rates.  Without it the snapshot pair drifts off the dynamics and
        # the designed constraint decay never closes.
        stretch = grid.sigma[:, None] * tf_dot
        wdot = wdot + snap.xdot * stretch
        udot = udot + snap.ctrl_traj.spline.derivative(grid.times) * stretch
        return self.layout.pack(udot, states=wdot, tf=tf_dot)

    # -- public surface ----------------------------------------------------
    def rhs(self, tau, vec):
        if self.method == "third":
            return self._rhs_third(tau, vec)
        return self._rhs_second(tau, vec)

    def residuals(self, vec) -> third_eq.Residuals:
        if self.method == "third":
            _, ctrl, states, stack, gu, pi = self._pipeline_third(vec)
        else:
            _, snap, stack, gu, pi = self._pipeline_second(vec)
            states, ctrl = snap.state_traj, snap.ctrl_traj
        return third_eq.optimality_residuals(self.problem, states, ctrl,
                                             stack, gu, pi)

    def gradient_norm(self, vec) -> float:
        """Sup-norm of the cost gradient at a snapshot (threshold scaling)."""
        if self.method == "third":
            _, _, _, _, gu, _ = self._pipeline_third(vec)
        else:
            _, _, _, gu, _ = self._pipeline_second(vec)
        return float(np.max(np.abs(gu)))

    def snapshot(self, tau, vec) -> SnapshotRecord:
        if self.method == "third":
            controls, _, tf = self.layout.unpack(vec)
            grid = self._grid(tf)
            ctrl = ControlTrajectory.from_values(grid, controls)
            states, cost = propagate_with_cost(self.problem, ctrl, grid, self.opts)
            stack = transition_stack(self.problem, states, ctrl, self.opts)
            gu = third_eq.control_gradient(self.problem, states, ctrl, stack)
            pi = self._solve_pi(states, ctrl, stack, gu)
        else:
            grid, snap, stack, gu, pi = self._pipeline_second(vec)
            states, ctrl = snap.state_traj, snap.ctrl_traj
            cost = path_cost(self.problem, states, ctrl, grid, self.opts)
        res = third_eq.optimality_residuals(self.problem, states, ctrl, stack,
                                            gu, pi)
        costates = third_eq.reconstruct_costates(self.problem, states, stack, pi)
        return SnapshotRecord(float(tau), grid.times.copy(), ctrl.values.copy(),
                              states.values.copy(), costates, cost,
                              None if pi is None else np.asarray(pi, dtype=float),
                              grid.tf, res)


def assemble_ivp(problem: OcpProblem, method: str, n_nodes: int,
                 gains: GainSet, init_controls=None, init_tf=None,
                 opts: Optional[IntegratorOptions] = None,
                 mode: str = "quasi_feasible") -> EvolutionSystem:
    """Build the tau-IVP for a problem and probe its right-hand side once.

    ``init_controls`` defaults to all-zero node controls; the coupled
    method initializes its node states by integrating the dynamics under
    that control, so the starting snapshot satisfies the dynamics and the
    initial condition.  The same integrator options drive both the inner
    (physical-time) and the outer (tau) integrations.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if n_nodes < 4:
        raise ValueError("need at least 4 discretization nodes")
    if problem.q > 0 and gains.K_g is None:
        raise ValueError("problems with terminal constraints need a K_g gain")
    opts = opts or IntegratorOptions()

    if init_controls is None:
        init_controls = np.zeros((n_nodes, problem.m))
    init_controls = np.atleast_2d(np.asarray(init_controls, dtype=float))
    if init_controls.shape != (n_nodes, problem.m):
        raise ValueError(
            f"init_controls must have shape {(n_nodes, problem.m)}")
    tf0 = float(init_tf) if init_tf is not None else problem.tf

    layout = StateLayout(method, n_nodes, problem.n, problem.m, problem.tf_free)
    grid = TimeGrid(n_nodes, problem.t0, tf0)
    if method == "second":
        ctrl = ControlTrajectory.from_values(grid, init_controls)
        states = propagate_states(problem, ctrl, grid, opts)
        y0 = layout.pack(init_controls, states=states.values,
                         tf=tf0 if problem.tf_free else None)
    else:
        y0 = layout.pack(init_controls, tf=tf0 if problem.tf_free else None)

    system = EvolutionSystem(problem, gains, method, n_nodes, opts, y0, mode)
    system.rhs(0.0, y0)  # surfaces singular multipliers and shape errors now
    return system


def _select_snapshots(requested, tau_end) -> List[float]:
    taus = set([0.0, float(tau_end)])
    for tau in requested:
        if 0.0 <= tau <= tau_end:
            taus.add(float(tau))
    return sorted(taus)


def evolve(system: EvolutionSystem, tau_end: float,
           snapshot_taus: Optional[Sequence[float]] = None,
           opts: Optional[IntegratorOptions] = None,
           early_stop: bool = True) -> EvolutionHistory:
    """Integrate the tau-IVP and record snapshots.

    Terminates early once all optimality residuals fall below their
    thresholds unless ``early_stop`` is disabled (fixed-span runs are the
    reproducible setting for comparisons).  On integration errors the
    history accumulated so far is attached to the raised exception as
    ``exc.history``.
    """
    if tau_end < 0.0:
        raise ValueError("tau_end must be non-negative")
    opts = opts or system.opts
    requested = DEFAULT_SNAPSHOTS if snapshot_taus is None else snapshot_taus

    if tau_end == 0.0:
        return EvolutionHistory([system.snapshot(0.0, system.y0)], "tau_end")

    opt_floor = (OPTIMALITY_RTOL * (1.0 + system.gradient_norm(system.y0))
                 if early_stop else None)

    def converged(vec) -> bool:
        res = system.residuals(vec)
        if res.optimality_inf > opt_floor or res.constraint_inf > CONSTRAINT_TOL:
            return False
        return res.transversality is None or res.transversality <= TRANSVERSALITY_TOL

    trace = [(0.0, system.y0.copy())]

    def on_step(tau, vec):
        trace.append((float(tau), vec.copy()))
        return early_stop and converged(vec)

    try:
        path = rk45_integrate(system.rhs, system.y0, (0.0, tau_end), opts,
                              on_step=on_step)
    except VemError as exc:
        exc.history = _history_from_trace(system, trace, requested,
                                          type(exc).__name__)
        raise

    reason = "converged" if path.stopped else "tau_end"
    reached = path.t_end
    history = EvolutionHistory(termination_reason=reason)
    for tau in _select_snapshots(requested, reached):
        history.snapshots.append(system.snapshot(tau, path.eval(tau)))
    return history


def _history_from_trace(system, trace, requested, reason) -> EvolutionHistory:
    reached = trace[-1][0]
    taus = np.array([t for t, _ in trace])
    history = EvolutionHistory(termination_reason=reason)
    seen = set()
    for tau in _select_snapshots(requested, reached):
        idx = int(np.searchsorted(taus, tau, side="right") - 1)
        if idx in seen:
            continue
        seen.add(idx)
        try:
            history.snapshots.append(system.snapshot(taus[idx], trace[idx][1]))
        except VemError:
            continue
    return history


def summarize(system: EvolutionSystem, history: EvolutionHistory,
              reference=None, wall_seconds: Optional[float] = None) -> SolveReport:
    """Condense a run into the table-style report.

    Errors against the reference are sup-norms over the final snapshot's
    nodes, one entry per control channel and per state.
    """
    last = history.final
    report = SolveReport(
        problem=system.problem.name,
        method=system.method,
        ivp_dimension=system.dimension,
        J=last.J,
        tf=last.tf,
        pi=last.pi,
        residuals=last.residuals,
        termination_reason=history.termination_reason,
        wall_seconds=wall_seconds,
    )
    if reference is not None:
        report.e_J = abs(last.J - reference.cost)
        u_ref = np.stack([np.atleast_1d(reference.control(t)) for t in last.times])
        x_ref = np.stack([np.atleast_1d(reference.state(t)) for t in last.times])
        report.e_u = np.max(np.abs(last.controls - u_ref), axis=0)
        report.e_x = np.max(np.abs(last.states - x_ref), axis=0)
    return report


def solve_benchmark(benchmark, method: str, n_nodes: Optional[int] = None,
                    tau_end: Optional[float] = None, gains: Optional[GainSet] = None,
                    opts: Optional[IntegratorOptions] = None,
                    snapshot_taus: Optional[Sequence[float]] = None,
                    early_stop: bool = True, mode: str = "quasi_feasible",
                    init_controls=None, init_tf=None):
    """Assemble, evolve, and summarize one benchmark run; returns
    (history, report) with wall time recorded on the report."""
    n_nodes = n_nodes if n_nodes is not None else benchmark.default_nodes
    tau_end = tau_end if tau_end is not None else benchmark.default_tau_end
    gains = gains or benchmark.gains
    system = assemble_ivp(benchmark.problem, method, n_nodes, gains,
                          init_controls=init_controls, init_tf=init_tf,
                          opts=opts, mode=mode)
    start = time.perf_counter()
    history = evolve(system, tau_end, snapshot_taus=snapshot_taus,
                     opts=opts, early_stop=early_stop)
    wall = time.perf_counter() - start
    report = summarize(system, history, benchmark.reference, wall_seconds=wall)
    return history, report
