"""Embedded Dormand-Prince 4(5) integration with dense output.

The stepper mirrors classic ode45 behaviour: a seven-stage pair with
proportional step control on the embedded 4th/5th-order error estimate
and a quartic interpolant for evaluation between accepted steps.  Both
forward and backward spans are supported; backward integration is used
throughout the solver for transition matrices and adjoint variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteField, StepFailure

# Butcher tableau (Dormand & Prince 1980).
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
# 5th-order propagating weights and the (b5 - b4) error weights.
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# Coefficients of the quartic interpolant (Shampine's free 4th-order
# continuous extension); column j multiplies theta**(j+1).
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_SAFETY = 0.9


@dataclass
class IntegratorOptions:
    """Tolerances and limits for the adaptive stepper.

    ``max_step`` defaults to one tenth of the integration span, which
    keeps the stepper inside its contraction region on long relaxation
    runs instead of parking at the stability boundary.
    """

    rtol: float = 1e-3
    atol: float = 1e-6
    max_steps: int = 20000
    initial_step: Optional[float] = None
    max_step: Optional[float] = None

    def __post_init__(self) -> None:
        if self.rtol <= 0.0 or self.atol <= 0.0:
            raise ValueError("rtol and atol must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.max_step is not None and self.max_step <= 0.0:
            raise ValueError("max_step must be positive")


class SolutionPath:
    """Piecewise-quartic dense output of one integration run.

    Supports evaluation at arbitrary query times within the integrated
    span, in either integration direction.
    """

    def __init__(self, ts, ys, qs, hs, stopped=False):
        self.ts = np.asarray(ts)          # accepted step boundaries, (S+1,)
        self.ys = np.asarray(ys)          # states at boundaries, (S+1, dim)
        self.qs = np.asarray(qs)          # interpolant coefficients, (S, dim, 4)
        self.hs = np.asarray(hs)          # signed step sizes, (S,)
        self.direction = 1.0 if self.ts[-1] >= self.ts[0] else -1.0
        self.stopped = stopped

    @property
    def t0(self) -> float:
        return float(self.ts[0])

    @property
    def t_end(self) -> float:
        return float(self.ts[-1])

    @property
    def y_end(self) -> np.ndarray:
        return self.ys[-1]

    def eval(self, t):
        """Evaluate the dense output at scalar or array query times."""
        t_arr = np.asarray(t, dtype=float)
        scalar = t_arr.ndim == 0
        tq = np.atleast_1d(t_arr)
        key = self.direction * self.ts
        idx = np.clip(np.searchsorted(key, self.direction * tq, side="right") - 1,
                      0, len(self.hs) - 1)
        theta = (tq - self.ts[idx]) / self.hs[idx]
        powers = np.vstack([theta, theta**2, theta**3, theta**4])  # (4, T)
        vals = self.ys[idx] + self.hs[idx, None] * np.einsum(
            "sdj,js->sd", self.qs[idx], powers
        )
        return vals[0] if scalar else vals

    __call__ = eval


def _initial_step(field, t0, y0, f0, direction, span, rtol, atol):
    """Hairer-style starting step selection."""
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2)) if y0.size else 0.0
    d1 = np.sqrt(np.mean((f0 / scale) ** 2)) if y0.size else 0.0
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, abs(span))
    y1 = y0 + h0 * direction * f0
    f1 = np.asarray(field(t0 + h0 * direction, y1), dtype=float)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, abs(span))


def _stages(field, t, y, h, f0):
    """Evaluate the seven stage derivatives; returns K of shape (7, dim)."""
    k = np.empty((7, y.size))
    k[0] = f0
    for i, a_row in enumerate(_A, start=1):
        ti = t + _C[i] * h
        yi = y + h * (a_row @ k[:i])
        k[i] = np.asarray(field(ti, yi), dtype=float)
    return k


def rk45_integrate(field, y0, t_span, opts: Optional[IntegratorOptions] = None,
                   on_step: Optional[Callable[[float, np.ndarray], bool]] = None
                   ) -> SolutionPath:
    """Integrate ``dy/dt = field(t, y)`` over ``t_span`` with dense output.

    ``t_span`` may run forward or backward.  The local error is kept at or
    below ``atol + rtol * |y|`` per component.  ``on_step``, when given, is
    called after each accepted step with ``(t, y)``; returning True halts
    the integration cleanly (the path's ``stopped`` flag is set).

    Raises StepFailure when the step size underflows or the accepted-step
    budget is exhausted, NonFiniteField when the field returns NaN or Inf.
    """
    opts = opts or IntegratorOptions()
    t0, t_end = float(t_span[0]), float(t_span[1])
    if abs(t_end - t0) <= 1e-14 * max(abs(t0), abs(t_end), 1.0):
        raise ValueError("degenerate t_span")
    direction = 1.0 if t_end > t0 else -1.0
    span = t_end - t0

    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    f0 = np.asarray(field(t0, y), dtype=float)
    if not np.all(np.isfinite(f0)):
        raise NonFiniteField(f"field returned non-finite values at t={t0}")

    h_max = abs(float(opts.max_step)) if opts.max_step is not None else 0.1 * abs(span)
    if opts.initial_step is not None:
        h_abs = abs(float(opts.initial_step))
    else:
        h_abs = _initial_step(field, t0, y, f0, direction, span, opts.rtol, opts.atol)
    h_abs = min(max(h_abs, 1e-12), h_max)

    ts = [t0]
    ys = [y.copy()]
    qs = []
    hs = []
    t = t0
    stopped = False
    accepted = 0
    tiny = 1e-14 * max(abs(t0), abs(t_end), 1.0)

    while direction * (t_end - t) > tiny:
        if accepted >= opts.max_steps:
            raise StepFailure(f"exceeded max_steps={opts.max_steps} at t={t}")
        h_abs = min(h_abs, h_max)
        if h_abs < tiny:
            raise StepFailure(f"step size underflow at t={t}")
        h = direction * h_abs
        if direction * (t + h - t_end) >= 0.0:  # final step snaps to t_end
            h = t_end - t

        k = _stages(field, t, y, h, f0)
        if not np.all(np.isfinite(k)):
            raise NonFiniteField(f"field returned non-finite values near t={t}")
        y_new = y + h * (_B @ k)
        err_vec = h * (_E @ k)
        scale = opts.atol + opts.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))

        if err <= 1.0:
            qs.append(k.T @ _P)
            hs.append(h)
            t = t + h
            y = y_new
            ts.append(t)
            ys.append(y.copy())
            accepted += 1
            f0 = k[6]  # last stage sits at (t+h, y_new): free first stage
            factor = _MAX_FACTOR if err == 0.0 else min(
                _MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err ** -0.2))
            h_abs *= factor
            if on_step is not None and on_step(t, y):
                stopped = True
                break
        else:
            h_abs *= max(_MIN_FACTOR, min(1.0, _SAFETY * err ** -0.2))

    return SolutionPath(ts, ys, qs, hs, stopped=stopped)


def rk45_fixed(field, y0, t_span, n_steps: int) -> SolutionPath:
    """Fixed-step variant of the same pair, for convergence studies."""
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    t0, t_end = float(t_span[0]), float(t_span[1])
    h = (t_end - t0) / n_steps
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    f0 = np.asarray(field(t0, y), dtype=float)

    ts = [t0]
    ys = [y.copy()]
    qs = []
    hs = []
    t = t0
    for i in range(n_steps):
        k = _stages(field, t, y, h, f0)
        if not np.all(np.isfinite(k)):
            raise NonFiniteField(f"field returned non-finite values near t={t}")
        y = y + h * (_B @ k)
        qs.append(k.T @ _P)
        hs.append(h)
        t = t0 + (i + 1) * h
        ts.append(t)
        ys.append(y.copy())
        f0 = np.asarray(field(t, y), dtype=float)
    return SolutionPath(ts, ys, qs, hs)
