"""Mixed-form Richards' equation solver.

Backward Euler in time, modified Picard linearization of the moisture
content, cell-centered finite volumes with harmonic-mean face
conductivities, and a cell-centered multigrid W-cycle for each linearized
problem.

Orientation: ``z = 0`` is the bottom of the domain and gravity acts in the
``-z`` direction, so the Darcy flux is ``q = -K (grad p + e_z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kern
from .constitutive import capacity, moisture, rel_conductivity
from .grid import CellGrid
from .randfield import SoilRealization


class SolverError(RuntimeError):
    pass


class SingularSystemError(SolverError):
    pass


class InnerSolverDivergence(SolverError):
    def __init__(self, message, cycles=0):
        super().__init__(message)
        self.cycles = cycles


class NonlinearFailure(SolverError):
    def __init__(self, step, iterations, reason="Picard iteration cap exceeded",
                 cycles=0):
        super().__init__(f"time step {step}: {reason} after {iterations} iterations")
        self.step = step
        self.iterations = iterations
        self.cycles = cycles


@dataclass(frozen=True)
class BoundaryConditions:
    """Dirichlet values on the bottom (z=0) and top (z=1) faces.

    ``None`` makes that face no-flux.  Lateral faces are always no-flux.
    """

    bottom: float | None = 0.1
    top: float | None = -0.4
    gravity: bool = True
    source: float = 0.0


@dataclass(frozen=True)
class SolverOptions:
    eps_pi: float = 1e-5
    eps_mg: float = 1e-5
    max_nl: int = 50
    max_cycles: int = 100
    pre_sweeps: int = 2
    post_sweeps: int = 2
    gamma: int = 2
    coarsest: int = 2
    coarse_sweeps: int = 50

    def __post_init__(self):
        if not (self.eps_pi > 0 and self.eps_mg > 0):
            raise ValueError("tolerances must be positive")
        if self.max_nl < 1 or self.max_cycles < 1:
            raise ValueError("iteration caps must be positive")


@dataclass
class PressureField:
    values: np.ndarray
    t: float = 0.0


@dataclass
class InnerSystem:
    """Linearized Picard problem ``(C/dt) dp - div(K grad dp) = rhs``."""

    h: float
    ax: np.ndarray
    az: np.ndarray
    cdt: np.ndarray
    rhs: np.ndarray
    k_cell: np.ndarray
    theta: np.ndarray

    @property
    def M(self):
        return self.rhs.shape[0]

    def stencil(self):
        """Five-point coefficients ``(c, w, e, s, n)`` per cell.

        Off-diagonals couple to neighbour cells only, so they vanish on the
        domain boundary; Dirichlet faces appear in ``c`` alone.
        """
        ih2 = 1.0 / self.h**2
        w = -self.ax[:-1, :] * ih2
        e = -self.ax[1:, :] * ih2
        s = -self.az[:, :-1] * ih2
        n = -self.az[:, 1:] * ih2
        c = -(w + e + s + n) + self.cdt
        w[0, :] = 0.0
        e[-1, :] = 0.0
        s[:, 0] = 0.0
        n[:, -1] = 0.0
        return c, w, e, s, n

    def apply(self, u):
        """``L u`` for ``u`` with homogeneous boundary values."""
        out = np.empty_like(u)
        kern.residual(np.ascontiguousarray(u), np.zeros_like(u), self.ax,
                      self.az, self.cdt, self.h, out)
        return -out


@dataclass
class SolveStats:
    cycles: int = 0
    picard: list = field(default_factory=list)
    failed: bool = False
    failure_step: int | None = None
    failure_reason: str | None = None
    mass_error: list = field(default_factory=list)
    clamped: int = 0

    @property
    def steps(self):
        return len(self.picard)

    def to_dict(self):
        return {
            "w_cycles": self.cycles,
            "picard_iterations": list(self.picard),
            "failed": self.failed,
            "failure_step": self.failure_step,
            "failure_reason": self.failure_reason,
            "max_mass_error": max(self.mass_error) if self.mass_error else 0.0,
            "clamped_cells": self.clamped,
        }


def harmonic_mean(a, b):
    return 2.0 * a * b / (a + b)


def assemble_inner(p, theta_old, soil: SoilRealization, dt, bc: BoundaryConditions,
                   h=None) -> InnerSystem:
    """Linearize the backward Euler step around the current iterate ``p``."""
    p = np.asarray(p, dtype=float)
    M = p.shape[0]
    h = 1.0 / M if h is None else h
    K = soil.ks * rel_conductivity(p, soil.alpha, soil.n)
    if not np.all(K > 0):
        raise SolverError("non-positive hydraulic conductivity")
    C = capacity(p, soil.alpha, soil.n, soil.theta_s, soil.theta_r)
    theta = moisture(p, soil.alpha, soil.n, soil.theta_s, soil.theta_r)
    g = 1.0 if bc.gravity else 0.0

    hx = harmonic_mean(K[:-1, :], K[1:, :])
    hz = harmonic_mean(K[:, :-1], K[:, 1:])

    ax = np.zeros((M + 1, M))
    ax[1:-1, :] = hx
    az = np.zeros((M, M + 1))
    az[:, 1:-1] = hz

    gx = np.zeros((M + 1, M))
    gx[1:-1, :] = hx * (p[1:, :] - p[:-1, :]) / h
    gz = np.zeros((M, M + 1))
    gz[:, 1:-1] = hz * ((p[:, 1:] - p[:, :-1]) / h + g)
    if bc.bottom is not None:
        # ghost elimination: half-cell distance to the boundary value
        az[:, 0] = 2.0 * K[:, 0]
        gz[:, 0] = K[:, 0] * (2.0 * (p[:, 0] - bc.bottom) / h + g)
    if bc.top is not None:
        az[:, M] = 2.0 * K[:, -1]
        gz[:, M] = K[:, -1] * (2.0 * (bc.top - p[:, -1]) / h + g)

    div = (gx[1:, :] - gx[:-1, :] + gz[:, 1:] - gz[:, :-1]) / h
    rhs = div + bc.source - (theta - theta_old) / dt
    return InnerSystem(h, ax, az, np.ascontiguousarray(C / dt), rhs, K, theta)


def coarsen_coefficients(ax, az):
    """Arithmetic-mean upscaling of face coefficients to the 2h grid."""
    return kern.coarsen_faces(np.ascontiguousarray(ax), np.ascontiguousarray(az))


def _restrict_cells(a):
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


@dataclass
class _Level:
    h: float
    ax: np.ndarray
    az: np.ndarray
    cdt: np.ndarray
    r: np.ndarray
    rc: np.ndarray | None
    ec: np.ndarray | None


class MgHierarchy:
    """Geometric level chain for one inner system.

    Face coefficients of each coarser level are the arithmetic means of the
    finer faces; the reaction term ``C/dt`` is averaged over the four
    children.  Coarse operators are rediscretizations with these values.
    """

    def __init__(self, system: InnerSystem, coarsest: int = 2):
        ax, az, cdt, h = system.ax, system.az, system.cdt, system.h
        if (system.ax < 0).any() or (system.az < 0).any():
            raise SolverError("negative face coefficient")
        self.levels: list[_Level] = []
        M = system.M
        while True:
            coarse = M % 2 == 0 and M // 2 >= coarsest
            self.levels.append(_Level(
                h, ax, az, cdt, np.empty((M, M)),
                np.empty((M // 2, M // 2)) if coarse else None,
                np.empty((M // 2, M // 2)) if coarse else None,
            ))
            if not coarse:
                break
            ax, az = coarsen_coefficients(ax, az)
            cdt = np.ascontiguousarray(_restrict_cells(cdt))
            h, M = 2.0 * h, M // 2
        diag0 = self.diagonal(0)
        if np.any(diag0 <= 0):
            raise SingularSystemError("zero diagonal in the inner system")

    def diagonal(self, k):
        lv = self.levels[k]
        return ((lv.ax[:-1, :] + lv.ax[1:, :] + lv.az[:, :-1] + lv.az[:, 1:])
                / lv.h**2 + lv.cdt)

    @property
    def face_coefficients(self):
        return [(lv.ax, lv.az) for lv in self.levels]


def smooth_gauss_seidel(system, u, f=None, sweeps=1):
    """Lexicographic Gauss-Seidel sweeps on ``L u = f`` (in place, returned)."""
    f = system.rhs if f is None else f
    u = np.ascontiguousarray(u, dtype=float)
    diag = ((system.ax[:-1, :] + system.ax[1:, :] + system.az[:, :-1]
             + system.az[:, 1:]) / system.h**2 + system.cdt)
    if np.any(diag == 0):
        raise SingularSystemError("zero diagonal in Gauss-Seidel smoother")
    kern.gauss_seidel(u, np.ascontiguousarray(f, dtype=float), system.ax,
                      system.az, system.cdt, system.h, sweeps)
    return u


def w_cycle(hier: MgHierarchy, k, f, u, opts: SolverOptions = SolverOptions()):
    """One multigrid cycle (``gamma = 2`` gives a W-cycle) on level ``k``."""
    lv = hier.levels[k]
    if lv.rc is None:
        kern.gauss_seidel(u, f, lv.ax, lv.az, lv.cdt, lv.h, opts.coarse_sweeps)
        return u
    kern.gauss_seidel(u, f, lv.ax, lv.az, lv.cdt, lv.h, opts.pre_sweeps)
    kern.residual(u, f, lv.ax, lv.az, lv.cdt, lv.h, lv.r)
    rc = np.empty_like(lv.rc)
    kern.restrict(lv.r, rc)
    ec = np.zeros_like(rc)
    for _ in range(opts.gamma):
        w_cycle(hier, k + 1, rc, ec, opts)
    kern.prolong_add(u, ec)
    kern.gauss_seidel(u, f, lv.ax, lv.az, lv.cdt, lv.h, opts.post_sweeps)
    return u


def solve_inner(system: InnerSystem, opts: SolverOptions = SolverOptions(),
                hier: MgHierarchy | None = None):
    """Solve from a zero initial guess until ``||f - L u||_inf < eps_mg``.

    Returns the update and the number of cycles performed.
    """
    f = np.ascontiguousarray(system.rhs, dtype=float)
    u = np.zeros_like(f)
    if kern.max_abs(f) < opts.eps_mg:
        return u, 0
    hier = MgHierarchy(system, opts.coarsest) if hier is None else hier
    r = np.empty_like(f)
    lv = hier.levels[0]
    cycle = 0
    for cycle in range(1, opts.max_cycles + 1):
        w_cycle(hier, 0, f, u, opts)
        kern.residual(u, f, lv.ax, lv.az, lv.cdt, lv.h, r)
        res = kern.max_abs(r)
        if not math.isfinite(res):
            break
        if res < opts.eps_mg:
            return u, cycle
    raise InnerSolverDivergence(
        f"multigrid did not reach {opts.eps_mg:g} in {opts.max_cycles} cycles",
        cycles=cycle,
    )


def boundary_inflow(k_cell, p, bc: BoundaryConditions) -> float:
    """Net inflow rate through the Dirichlet top and bottom faces."""
    M = p.shape[0]
    h = 1.0 / M
    g = 1.0 if bc.gravity else 0.0
    total = 0.0
    if bc.top is not None:
        total += np.sum(k_cell[:, -1] * (2.0 * (bc.top - p[:, -1]) / h + g))
    if bc.bottom is not None:
        total -= np.sum(k_cell[:, 0] * (2.0 * (p[:, 0] - bc.bottom) / h + g))
    return float(h * total)


@dataclass
class StepResult:
    p: np.ndarray
    theta: np.ndarray
    iterations: int
    cycles: int
    storage: float
    inflow: float

    @property
    def mass_error(self):
        scale = max(abs(self.storage), abs(self.inflow), 1e-300)
        return abs(self.storage - self.inflow) / scale


def picard_time_step(p_old, theta_old, soil, dt, bc=BoundaryConditions(),
                     opts: SolverOptions = SolverOptions(), step=0) -> StepResult:
    """Advance one backward Euler step with modified Picard iterations.

    The mass budget compares the change in stored water against the
    boundary inflow of the last linearized problem over ``dt``.
    """
    p = np.array(p_old, dtype=float)
    cycles = 0
    h = 1.0 / p.shape[0]
    for k in range(1, opts.max_nl + 1):
        system = assemble_inner(p, theta_old, soil, dt, bc, h)
        try:
            dp, used = solve_inner(system, opts)
        except InnerSolverDivergence as exc:
            raise NonlinearFailure(step, k, str(exc), cycles + exc.cycles) from None
        cycles += used
        p += dp
        if not np.all(np.isfinite(p)):
            raise NonlinearFailure(step, k, "non-finite pressure", cycles)
        if kern.max_abs(dp) < opts.eps_pi:
            theta = moisture(p, soil.alpha, soil.n, soil.theta_s, soil.theta_r)
            # inflow of the converged linear problem: fluxes use K of the
            # last linearization and the updated pressure
            flux = boundary_inflow(system.k_cell, p, bc)
            storage = float(((theta - theta_old) * h * h).sum())
            return StepResult(p, theta, k, cycles, storage, dt * flux)
    raise NonlinearFailure(step, opts.max_nl, cycles=cycles)


def time_steps(dt, t_final):
    """Step sizes reaching ``t_final``; a shorter last step absorbs the rest."""
    if dt <= 0 or t_final <= 0:
        raise ValueError("dt and t_final must be positive")
    n = max(1, math.ceil(t_final / dt - 1e-9))
    steps = [dt] * (n - 1)
    steps.append(t_final - dt * (n - 1))
    return steps


def solve_richards(p0, soil, dt, t_final, bc=BoundaryConditions(),
                   opts: SolverOptions = SolverOptions()):
    """March from ``p0`` to ``t_final``; failures are flagged, not raised."""
    p = np.array(p0, dtype=float)
    theta = moisture(p, soil.alpha, soil.n, soil.theta_s, soil.theta_r)
    stats = SolveStats(clamped=soil.clamped)
    t = 0.0
    for step, tau in enumerate(time_steps(dt, t_final)):
        try:
            res = picard_time_step(p, theta, soil, tau, bc, opts, step)
        except NonlinearFailure as exc:
            stats.failed = True
            stats.failure_step = step
            stats.failure_reason = str(exc)
            stats.picard.append(exc.iterations)
            stats.cycles += exc.cycles
            break
        p, theta = res.p, res.theta
        t += tau
        stats.cycles += res.cycles
        stats.picard.append(res.iterations)
        stats.mass_error.append(res.mass_error)
    return PressureField(p, t), stats


def infiltration_initial(grid: CellGrid) -> np.ndarray:
    """Initial head ``-0.4 (1 - exp(-80 z))`` at the cell centers."""
    _, z = grid.meshgrid()
    return -0.4 * (1.0 - np.exp(-80.0 * z))
