"""Shared numerical kernels: cubic splines, grid quadrature, dense solves.

Spline construction delegates to scipy's not-a-knot cubic spline (with its
built-in degree fallback for 2-3 nodes); evaluation goes through a light
Horner path because the solver queries splines at scalar times inside
inner ODE loops, where scipy's PPoly call overhead dominates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

from .errors import DegenerateGrid, SingularSystem

COND_LIMIT = 1e12


def _check_grid(nodes: np.ndarray) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 2:
        raise DegenerateGrid("need at least two grid nodes")
    if not np.all(np.diff(nodes) > 0.0):
        raise DegenerateGrid("grid nodes must be strictly increasing")
    return nodes


@dataclass
class SplineCoeffs:
    """Per-interval cubic coefficients over common breakpoints.

    ``coeffs[p, j, c]`` multiplies ``(t - breakpoints[j]) ** (3 - p)`` on
    interval j for channel c.  ``squeeze`` records whether the input values
    were one-dimensional, so evaluation mirrors the caller's shape.
    """

    breakpoints: np.ndarray     # (N,)
    coeffs: np.ndarray          # (4, N-1, channels)
    squeeze: bool = False

    @property
    def n_channels(self) -> int:
        return self.coeffs.shape[2]

    def _locate(self, t):
        t_arr = np.asarray(t, dtype=float)
        idx = np.clip(
            np.searchsorted(self.breakpoints, t_arr, side="right") - 1,
            0, len(self.breakpoints) - 2,
        )
        return t_arr, idx, t_arr - self.breakpoints[idx]

    def eval(self, t):
        """Value at scalar or array times; edge polynomials extrapolate."""
        t_arr, idx, dt = self._locate(t)
        if t_arr.ndim == 0:
            c = self.coeffs[:, idx, :]
            out = ((c[0] * dt + c[1]) * dt + c[2]) * dt + c[3]
            return out[0] if self.squeeze else out
        c = self.coeffs[:, idx, :]
        dt = dt[:, None]
        out = ((c[0] * dt + c[1]) * dt + c[2]) * dt + c[3]
        return out[:, 0] if self.squeeze else out

    def derivative(self, t):
        """First time-derivative at scalar or array times."""
        t_arr, idx, dt = self._locate(t)
        if t_arr.ndim == 0:
            c = self.coeffs[:, idx, :]
            out = (3.0 * c[0] * dt + 2.0 * c[1]) * dt + c[2]
            return out[0] if self.squeeze else out
        c = self.coeffs[:, idx, :]
        dt = dt[:, None]
        out = (3.0 * c[0] * dt + 2.0 * c[1]) * dt + c[2]
        return out[:, 0] if self.squeeze else out

    __call__ = eval


def spline_build(nodes, values) -> SplineCoeffs:
    """Not-a-knot cubic spline through node values.

    ``values`` of shape (N,) or (N, channels).  Exact at nodes and exactly
    reproduces cubic polynomials for N >= 4; 2-3 nodes fall back to the
    interpolating line or parabola.
    """
    nodes = _check_grid(nodes)
    vals = np.asarray(values, dtype=float)
    squeeze = vals.ndim == 1
    if squeeze:
        vals = vals[:, None]
    if vals.shape[0] != nodes.size:
        raise DegenerateGrid("values and nodes disagree in length")
    cs = CubicSpline(nodes, vals, axis=0, bc_type="not-a-knot")
    coeffs = cs.c
    if coeffs.shape[0] < 4:  # low-degree fallback pads the cubic rows
        pad = np.zeros((4 - coeffs.shape[0],) + coeffs.shape[1:])
        coeffs = np.concatenate([pad, coeffs], axis=0)
    return SplineCoeffs(nodes, coeffs, squeeze=squeeze)


def spline_eval(spline: SplineCoeffs, t):
    return spline.eval(t)


def grid_quadrature(grid, samples):
    """Composite-trapezoid integral of per-node samples over the grid."""
    grid = _check_grid(grid)
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] != grid.size:
        raise DegenerateGrid("samples and grid disagree in length")
    return np.trapezoid(samples, grid, axis=0)


def cumulative_from_right(grid, samples):
    """Per-node running integrals from each node to the final node.

    Entry i approximates the integral of the samples over [t_i, t_last]
    with the composite trapezoid rule; the last entry is exactly zero and
    the first equals ``grid_quadrature`` of the same samples.
    """
    grid = _check_grid(grid)
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] != grid.size:
        raise DegenerateGrid("samples and grid disagree in length")
    left = cumulative_trapezoid(samples, grid, axis=0, initial=0.0)
    return left[-1] - left


def solve_dense(mat, rhs):
    """Solve a small dense system; returns (solution, condition estimate).

    Raises SingularSystem when the condition estimate exceeds COND_LIMIT,
    which signals a rank-deficient constraint Jacobian or a vanishing
    controllability Gramian upstream.
    """
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    if not np.all(np.isfinite(mat)):
        raise SingularSystem("matrix contains non-finite entries")
    cond = float(np.linalg.cond(mat))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystem(f"condition estimate {cond:.3e} exceeds {COND_LIMIT:.0e}")
    return np.linalg.solve(mat, rhs), cond
