"""Bolza optimal-control problem container, gain sets, derivative checks.

A problem bundles the dynamics, running and terminal costs, the terminal
constraint, and their first derivatives as plain callables of
``(x, u, t)`` (or ``(x_f, t_f)`` for terminal quantities).  Derivative
callbacks may be omitted; central-difference fallbacks of O(h^2) accuracy
are wired in at construction.  Problems are immutable after construction
and all callbacks must be reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import NonFiniteCallback

_FD_STEP = 1e-6


def _fd_jac_x(fun, h=_FD_STEP):
    def jac(x, u, t):
        x = np.asarray(x, dtype=float)
        cols = []
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            cols.append((np.asarray(fun(x + e, u, t), dtype=float)
                         - np.asarray(fun(x - e, u, t), dtype=float)) / (2 * h))
        return np.stack(cols, axis=-1)
    return jac


def _fd_jac_u(fun, h=_FD_STEP):
    def jac(x, u, t):
        u = np.asarray(u, dtype=float)
        cols = []
        for i in range(u.size):
            e = np.zeros_like(u)
            e[i] = h
            cols.append((np.asarray(fun(x, u + e, t), dtype=float)
                         - np.asarray(fun(x, u - e, t), dtype=float)) / (2 * h))
        return np.stack(cols, axis=-1)
    return jac


def _fd_grad_terminal(fun, h=_FD_STEP):
    def grad(xf, tf):
        xf = np.asarray(xf, dtype=float)
        out = np.empty(xf.size)
        for i in range(xf.size):
            e = np.zeros_like(xf)
            e[i] = h
            out[i] = (fun(xf + e, tf) - fun(xf - e, tf)) / (2 * h)
        return out
    return grad


def _fd_jac_terminal(fun, h=_FD_STEP):
    def jac(xf, tf):
        xf = np.asarray(xf, dtype=float)
        cols = []
        for i in range(xf.size):
            e = np.zeros_like(xf)
            e[i] = h
            cols.append((np.asarray(fun(xf + e, tf), dtype=float)
                         - np.asarray(fun(xf - e, tf), dtype=float)) / (2 * h))
        return np.stack(cols, axis=-1)
    return jac


def _fd_dt_terminal(fun, vector, h=_FD_STEP):
    def deriv(xf, tf):
        hi = np.asarray(fun(xf, tf + h), dtype=float)
        lo = np.asarray(fun(xf, tf - h), dtype=float)
        out = (hi - lo) / (2 * h)
        return out if vector else float(out)
    return deriv


@dataclass(frozen=True)
class OcpProblem:
    """Terminally constrained Bolza problem on a fixed or free horizon.

    Cost is ``phi(x(tf), tf) + integral of L(x, u, t)``, subject to
    ``dx/dt = f(x, u, t)``, ``x(t0) = x0`` and, when ``q > 0``, the
    terminal condition ``g(x(tf), tf) = 0``.  ``tf_mode`` is "fixed"
    (``tf`` is the horizon) or "free" (``tf`` is the initial guess).
    """

    n: int
    m: int
    q: int
    t0: float
    x0: np.ndarray
    tf_mode: str
    tf: float
    dynamics: Callable = None
    jac_fx: Optional[Callable] = None
    jac_fu: Optional[Callable] = None
    running_cost: Optional[Callable] = None
    grad_lx: Optional[Callable] = None
    grad_lu: Optional[Callable] = None
    terminal_cost: Optional[Callable] = None
    grad_phix: Optional[Callable] = None
    dphi_dt: Optional[Callable] = None
    hess_phixx: Optional[Callable] = None
    dphi_dxdt: Optional[Callable] = None
    constraint: Optional[Callable] = None
    jac_gx: Optional[Callable] = None
    dg_dt: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("state and control dimensions must be positive")
        if self.q < 0:
            raise ValueError("constraint dimension must be non-negative")
        if self.dynamics is None:
            raise ValueError("dynamics callback is required")
        if self.tf_mode not in ("fixed", "free"):
            raise ValueError("tf_mode must be 'fixed' or 'free'")
        if self.tf <= self.t0:
            raise ValueError("terminal time must exceed the initial time")
        if self.q > 0 and self.constraint is None:
            raise ValueError("q > 0 requires a terminal-constraint callback")

        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "tf", float(self.tf))

        n, m, q = self.n, self.m, self.q
        set_ = object.__setattr__
        if self.jac_fx is None:
            set_(self, "jac_fx", _fd_jac_x(self.dynamics))
        if self.jac_fu is None:
            set_(self, "jac_fu", _fd_jac_u(self.dynamics))

        if self.running_cost is None:
            set_(self, "running_cost", lambda x, u, t: 0.0)
            set_(self, "grad_lx", lambda x, u, t: np.zeros(n))
            set_(self, "grad_lu", lambda x, u, t: np.zeros(m))
        else:
            cost_vec = lambda x, u, t: np.atleast_1d(self.running_cost(x, u, t))
            if self.grad_lx is None:
                fd = _fd_jac_x(cost_vec)
                set_(self, "grad_lx", lambda x, u, t: fd(x, u, t).reshape(n))
            if self.grad_lu is None:
                fd_u = _fd_jac_u(cost_vec)
                set_(self, "grad_lu", lambda x, u, t: fd_u(x, u, t).reshape(m))

        if self.terminal_cost is None:
            set_(self, "terminal_cost", lambda xf, tf: 0.0)
            set_(self, "grad_phix", lambda xf, tf: np.zeros(n))
            set_(self, "dphi_dt", lambda xf, tf: 0.0)
        else:
            if self.grad_phix is None:
                set_(self, "grad_phix", _fd_grad_terminal(self.terminal_cost))
            if self.dphi_dt is None:
                set_(self, "dphi_dt", _fd_dt_terminal(self.terminal_cost, vector=False))
        # Second-order terminal-cost terms default to zero.
        if self.hess_phixx is None:
            set_(self, "hess_phixx", lambda xf, tf: np.zeros((n, n)))
        if self.dphi_dxdt is None:
            set_(self, "dphi_dxdt", lambda xf, tf: np.zeros(n))

        if q > 0:
            if self.jac_gx is None:
                set_(self, "jac_gx", _fd_jac_terminal(self.constraint))
            if self.dg_dt is None:
                set_(self, "dg_dt", _fd_dt_terminal(self.constraint, vector=True))

    @property
    def tf_free(self) -> bool:
        return self.tf_mode == "free"


def _require_spd(name: str, mat: np.ndarray) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got {mat.shape}")
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > 1e-12 * scale:
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{name} must be positive-definite") from exc
    return mat


@dataclass(frozen=True)
class GainSet:
    """Positive-definite evolution gains.

    ``K`` drives the control channels, ``K_g`` the terminal-constraint
    attraction, ``k_tf`` the terminal-time channel.  ``K_x0`` and ``K_f``
    only enter the modified (infeasible-domain) formulation and default
    to identity matrices when first used.
    """

    K: np.ndarray
    K_g: Optional[np.ndarray] = None
    k_tf: float = 0.05
    K_x0: Optional[np.ndarray] = None
    K_f: Optional[np.ndarray] = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "K", _require_spd("K", self.K))
        if self.K_g is not None:
            set_(self, "K_g", _require_spd("K_g", self.K_g))
        if self.k_tf <= 0.0:
            raise ValueError("k_tf must be positive")
        if self.K_x0 is not None:
            set_(self, "K_x0", _require_spd("K_x0", self.K_x0))
        if self.K_f is not None:
            set_(self, "K_f", _require_spd("K_f", self.K_f))

    def kx0(self, n: int) -> np.ndarray:
        return self.K_x0 if self.K_x0 is not None else np.eye(n)

    def kf(self, n: int) -> np.ndarray:
        return self.K_f if self.K_f is not None else np.eye(n)


@dataclass
class ValidationReport:
    """Findings from probing a problem's callbacks; empty means usable."""

    findings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def add(self, message: str) -> None:
        self.findings.append(message)


def _probe(report, label, fun, expect_shape=None, scalar=False):
    try:
        out = fun()
    except Exception as exc:  # callbacks are user code
        report.add(f"{label}: raised {type(exc).__name__}: {exc}")
        return
    arr = np.asarray(out, dtype=float)
    if scalar:
        if arr.shape not in ((), (1,)):
            report.add(f"{label}: expected a scalar, got shape {arr.shape}")
            return
    elif expect_shape is not None and arr.shape != expect_shape:
        report.add(f"{label}: expected shape {expect_shape}, got {arr.shape}")
        return
    if not np.all(np.isfinite(arr)):
        report.add(f"{label}: non-finite output at probe point")


def validate_problem(problem: OcpProblem) -> ValidationReport:
    """Probe every callback at (x0, u=0, t0) and collect findings.

    Pure: identical problems yield identical reports.  Nothing raises;
    the report carries dimension mismatches, non-finite outputs, and
    constraint-rank violations.
    """
    report = ValidationReport()
    n, m, q = problem.n, problem.m, problem.q
    if q > n:
        report.add(f"constraint dimension q={q} exceeds state dimension n={n}")
    if problem.x0.shape != (n,):
        report.add(f"x0: expected shape {(n,)}, got {problem.x0.shape}")
        return report

    x, u, t = problem.x0, np.zeros(m), problem.t0
    xf, tf = problem.x0, problem.tf
    _probe(report, "dynamics", lambda: problem.dynamics(x, u, t), (n,))
    _probe(report, "jac_fx", lambda: problem.jac_fx(x, u, t), (n, n))
    _probe(report, "jac_fu", lambda: problem.jac_fu(x, u, t), (n, m))
    _probe(report, "running_cost", lambda: problem.running_cost(x, u, t), scalar=True)
    _probe(report, "grad_lx", lambda: problem.grad_lx(x, u, t), (n,))
    _probe(report, "grad_lu", lambda: problem.grad_lu(x, u, t), (m,))
    _probe(report, "terminal_cost", lambda: problem.terminal_cost(xf, tf), scalar=True)
    _probe(report, "grad_phix", lambda: problem.grad_phix(xf, tf), (n,))
    _probe(report, "dphi_dt", lambda: problem.dphi_dt(xf, tf), scalar=True)
    _probe(report, "hess_phixx", lambda: problem.hess_phixx(xf, tf), (n, n))
    _probe(report, "dphi_dxdt", lambda: problem.dphi_dxdt(xf, tf), (n,))
    if q > 0:
        _probe(report, "constraint", lambda: problem.constraint(xf, tf), (q,))
        _probe(report, "jac_gx", lambda: problem.jac_gx(xf, tf), (q, n))
        _probe(report, "dg_dt", lambda: problem.dg_dt(xf, tf), (q,))
    return report


@dataclass
class DiscrepancyReport:
    """Max absolute gap between analytic and finite-difference derivatives."""

    entries: Dict[str, float]

    @property
    def worst(self) -> float:
        return max(self.entries.values()) if self.entries else 0.0


def check_derivatives(problem: OcpProblem, x, u, t, h: float = 1e-6
                      ) -> DiscrepancyReport:
    """Compare derivative callbacks against central differences at a point."""
    if h <= 0.0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    probes = [problem.dynamics(x, u, t), problem.running_cost(x, u, t),
              problem.terminal_cost(x, problem.tf)]
    if problem.q > 0:
        probes.append(problem.constraint(x, problem.tf))
    for out in probes:
        if not np.all(np.isfinite(np.asarray(out, dtype=float))):
            raise NonFiniteCallback("callback returned non-finite values at probe point")

    entries = {}
    entries["jac_fx"] = float(np.max(np.abs(
        np.asarray(problem.jac_fx(x, u, t)) - _fd_jac_x(problem.dynamics, h)(x, u, t))))
    entries["jac_fu"] = float(np.max(np.abs(
        np.asarray(problem.jac_fu(x, u, t)) - _fd_jac_u(problem.dynamics, h)(x, u, t))))
    lx_fd = _fd_jac_x(lambda *a: np.atleast_1d(problem.running_cost(*a)), h)(x, u, t)
    entries["grad_lx"] = float(np.max(np.abs(
        np.asarray(problem.grad_lx(x, u, t)) - lx_fd.reshape(problem.n))))
    lu_fd = _fd_jac_u(lambda *a: np.atleast_1d(problem.running_cost(*a)), h)(x, u, t)
    entries["grad_lu"] = float(np.max(np.abs(
        np.asarray(problem.grad_lu(x, u, t)) - lu_fd.reshape(problem.m))))
    tf = problem.tf
    entries["grad_phix"] = float(np.max(np.abs(
        np.asarray(problem.grad_phix(x, tf))
        - _fd_grad_terminal(problem.terminal_cost, h)(x, tf))))
    if problem.q > 0:
        entries["jac_gx"] = float(np.max(np.abs(
            np.asarray(problem.jac_gx(x, tf))
            - _fd_jac_terminal(problem.constraint, h)(x, tf))))
    return DiscrepancyReport(entries)
