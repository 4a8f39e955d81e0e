"""Time grids, state propagation, and transition-matrix stacks.

The solver works on a fixed normalized grid sigma in [0, 1]; physical
node times are an affine image of sigma, so a moving terminal time only
stretches the grid and never resamples node values.

The stack of matrices Psi(t_i) -- the transposed state transition matrix
from t_i to the terminal time -- is obtained from one backward matrix
initial-value problem, d(Psi)/dt = -f_x(t)^T Psi with Psi(tf) = I, which
is equivalent to integrating the forward variational equation per node
but costs a single n-by-n integration.  A running adjoint vector is
integrated alongside (same backward sweep, same Jacobian evaluations):
lam' = -f_x^T lam - L_x with lam(tf) set to the terminal-cost gradient.
That vector is exactly the cost-gradient kernel the evolution equations
consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NonFiniteDynamics, NonFiniteField, SingularSystem
from .numerics import COND_LIMIT, SplineCoeffs, spline_build
from .ocp import OcpProblem
from .rk45 import IntegratorOptions, SolutionPath, rk45_integrate


@dataclass(frozen=True)
class TimeGrid:
    """Uniform normalized grid with its physical image on [t0, tf]."""

    n_nodes: int
    t0: float
    tf: float
    sigma: np.ndarray = field(repr=False, default=None)
    times: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.n_nodes < 4:
            raise ValueError("need at least 4 grid nodes")
        if self.tf <= self.t0:
            raise ValueError("tf must exceed t0")
        sigma = np.linspace(0.0, 1.0, self.n_nodes)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "times", self.t0 + sigma * (self.tf - self.t0))

    def with_tf(self, tf: float) -> "TimeGrid":
        """Same sigma nodes, rescaled physical times."""
        return TimeGrid(self.n_nodes, self.t0, float(tf))


@dataclass
class ControlTrajectory:
    """Node controls on a grid plus their spline interpolant."""

    grid: TimeGrid
    values: np.ndarray          # (N, m)
    spline: SplineCoeffs

    @classmethod
    def from_values(cls, grid: TimeGrid, values) -> "ControlTrajectory":
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[0] != grid.n_nodes:
            values = values.T
        if values.shape[0] != grid.n_nodes:
            raise ValueError("control values do not match the grid")
        return cls(grid, values, spline_build(grid.times, values))

    def eval(self, t):
        return self.spline.eval(t)


@dataclass
class StateTrajectory:
    """Node states plus a dense evaluator for off-node queries."""

    grid: TimeGrid
    values: np.ndarray          # (N, n)
    _eval: object = None        # callable t -> (n,)

    @classmethod
    def from_path(cls, grid: TimeGrid, values, path: SolutionPath) -> "StateTrajectory":
        return cls(grid, np.asarray(values, dtype=float), path.eval)

    @classmethod
    def from_nodes(cls, grid: TimeGrid, values) -> "StateTrajectory":
        values = np.asarray(values, dtype=float)
        spline = spline_build(grid.times, values)
        return cls(grid, values, spline.eval)

    def eval(self, t):
        return self._eval(t)


def propagate_states(problem: OcpProblem, ctrl: ControlTrajectory,
                     grid: TimeGrid, opts: Optional[IntegratorOptions] = None
                     ) -> StateTrajectory:
    """Integrate the dynamics under the spline-interpolated control.

    Runs from (t0, x0) to tf; node states are read from the dense output
    and the initial node is pinned to x0 exactly.
    """
    def field_fn(t, x):
        return problem.dynamics(x, ctrl.eval(t), t)

    try:
        path = rk45_integrate(field_fn, problem.x0, (grid.t0, grid.tf), opts)
    except NonFiniteField as exc:
        raise NonFiniteDynamics(str(exc)) from exc
    values = path.eval(grid.times)
    values[0] = problem.x0
    return StateTrajectory.from_path(grid, values, path)


@dataclass
class TransitionStack:
    """Per-node Psi(t_i) = transposed transition matrix to the final time.

    ``psi[-1]`` is the identity exactly.  ``adjoint`` holds the backward
    cost-gradient vector integrated on the same sweep.  The originating
    trajectory data is kept so forward transition matrices (needed by the
    quadrature-form diagnostics) can be built lazily.
    """

    grid: TimeGrid
    psi: np.ndarray             # (N, n, n)
    adjoint: np.ndarray         # (N, n)
    problem: OcpProblem = field(repr=False, default=None)
    states: StateTrajectory = field(repr=False, default=None)
    ctrl: ControlTrajectory = field(repr=False, default=None)
    opts: IntegratorOptions = field(repr=False, default=None)
    _forward: Optional[np.ndarray] = field(repr=False, default=None)

    def forward_matrices(self) -> np.ndarray:
        """Transition matrices from t0 to every node, cached."""
        if self._forward is None:
            self._forward = _forward_stack(self.problem, self.states,
                                           self.ctrl, self.grid, self.opts)
        return self._forward


def transition_stack(problem: OcpProblem, states: StateTrajectory,
                     ctrl: ControlTrajectory,
                     opts: Optional[IntegratorOptions] = None) -> TransitionStack:
    """One backward sweep producing Psi at every node plus the adjoint."""
    grid = states.grid
    n = problem.n
    x_end = states.values[-1]
    lam_end = np.asarray(problem.grad_phix(x_end, grid.tf), dtype=float)

    def field_fn(t, z):
        psi = z[:n * n].reshape(n, n)
        lam = z[n * n:]
        x = states.eval(t)
        u = ctrl.eval(t)
        at = np.asarray(problem.jac_fx(x, u, t), dtype=float).T
        dpsi = -at @ psi
        dlam = -at @ lam - np.asarray(problem.grad_lx(x, u, t), dtype=float)
        return np.concatenate([dpsi.ravel(), dlam])

    z0 = np.concatenate([np.eye(n).ravel(), lam_end])
    path = rk45_integrate(field_fn, z0, (grid.tf, grid.t0), opts)
    z_nodes = path.eval(grid.times)
    psi = z_nodes[:, :n * n].reshape(grid.n_nodes, n, n)
    adjoint = z_nodes[:, n * n:]
    psi[-1] = np.eye(n)
    adjoint[-1] = lam_end
    return TransitionStack(grid, psi, adjoint, problem=problem, states=states,
                           ctrl=ctrl, opts=opts)


def _forward_stack(problem, states, ctrl, grid, opts) -> np.ndarray:
    n = problem.n

    def field_fn(t, z):
        phi = z.reshape(n, n)
        x = states.eval(t)
        u = ctrl.eval(t)
        a = np.asarray(problem.jac_fx(x, u, t), dtype=float)
        return (a @ phi).ravel()

    path = rk45_integrate(field_fn, np.eye(n).ravel(), (grid.t0, grid.tf), opts)
    mats = path.eval(grid.times).reshape(grid.n_nodes, n, n)
    mats[0] = np.eye(n)
    return mats


def phi_between(stack: TransitionStack, i: int, j: int) -> np.ndarray:
    """Transition matrix from node j to node i (t_j <= t_i).

    Built from the forward matrices via the semigroup property; consistent
    with ``stack.psi`` since Psi(t_i)^T equals the transition from t_i to
    the final node.
    """
    if i == j:
        return np.eye(stack.psi.shape[1])
    fwd = stack.forward_matrices()
    base = fwd[j]
    if np.linalg.cond(base) > COND_LIMIT:
        raise SingularSystem("forward transition matrix is numerically singular")
    # Phi(t_i, t_j) = Phi(t_i, t0) Phi(t_j, t0)^{-1}
    return np.linalg.solve(base.T, fwd[i].T).T
