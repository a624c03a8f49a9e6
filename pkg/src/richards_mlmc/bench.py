"""Experiment drivers: infiltration problem, robustness cost maps,
discretization convergence and estimator comparisons."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .grid import CellGrid
from .io import write_rows_csv
from .randfield import PHI1, MaternSpec, SoilBaselines, cached_sampler, draw_noise, soil_from_noise
from .solver import BoundaryConditions, SolverOptions, infiltration_initial, solve_richards
from . import uq

STREAM_COSTMAP = 2
STREAM_CONVERGENCE = 3

DEFAULT_ALPHAS = tuple(round(0.2 * k, 10) for k in range(1, 21))
DEFAULT_NS = tuple(
    [round(1.1 + 0.1 * k, 10) for k in range(10)]
    + [round(2.2 + 0.2 * k, 10) for k in range(10)]
)


@dataclass(frozen=True)
class InfiltrationProblem:
    """Wet bottom, dry top, no-flux sides, dry initial profile."""

    grid: CellGrid
    dt: float
    t_final: float = 0.1
    bc: BoundaryConditions = BoundaryConditions(bottom=0.1, top=-0.4)

    def initial(self) -> np.ndarray:
        return infiltration_initial(self.grid)

    def solve(self, soil, opts: SolverOptions = SolverOptions()):
        return solve_richards(self.initial(), soil, self.dt, self.t_final, self.bc, opts)


def infiltration_problem(grid: CellGrid, dt: float, t_final: float = 0.1) -> InfiltrationProblem:
    return InfiltrationProblem(grid, dt, t_final)


@dataclass(frozen=True)
class CostMapCell:
    alpha: float
    n: float
    mean_cycles: float
    std_cycles: float
    failures: int
    reps: int

    @property
    def flagged(self) -> bool:
        return self.failures > 0


def _cost_map_run(problem, matern, seed, opts, padding, item):
    alpha, n, rep = item
    sampler = cached_sampler(problem.grid.M, matern, padding)
    noise = draw_noise(seed, (STREAM_COSTMAP, rep), sampler.padded_shape)
    base = SoilBaselines.deterministic(alpha=alpha, n=n, random_ks=True)
    _, stats = problem.solve(soil_from_noise(sampler, noise, base), opts)
    return stats.cycles, stats.failed


def cost_map(alphas=DEFAULT_ALPHAS, ns=DEFAULT_NS, reps: int = 64, M: int = 32,
             dt: float = 1 / 64, matern: MaternSpec = PHI1, seed: int = 0,
             t_final: float = 0.1, opts: SolverOptions = SolverOptions(),
             threads: int = 1, padding: int = 2) -> list[CostMapCell]:
    """Mean and spread of W-cycle cost over random conductivity fields.

    Only the saturated conductivity is random.  Repetition ``r`` uses the
    same conductivity field for every ``(alpha, n)`` pair, so trends across
    the map are not blurred by sampling noise.  Means and spreads cover the
    successful runs only (NaN when every run failed).
    """
    problem = infiltration_problem(CellGrid(M), dt, t_final)
    items = [(float(a), float(n), r) for a in alphas for n in ns for r in range(reps)]
    fn = partial(_cost_map_run, problem, matern, seed, opts, padding)
    results = uq.fan_out(fn, items, threads)
    cells = []
    for k in range(0, len(items), reps):
        a, n, _ = items[k]
        chunk = results[k:k + reps]
        ok = [c for c, failed in chunk if not failed]
        mean = float(np.mean(ok)) if ok else math.nan
        std = float(np.std(ok, ddof=1)) if len(ok) > 1 else (0.0 if ok else math.nan)
        cells.append(CostMapCell(a, n, mean, std, reps - len(ok), reps))
    return cells


def write_cost_map_csv(path, cells):
    return write_rows_csv(path, ["alpha", "n", "mean_cycles", "std_cycles", "failures", "reps"],
                          [(c.alpha, c.n, c.mean_cycles, c.std_cycles, c.failures, c.reps)
                           for c in cells])


@dataclass
class ConvergenceResult:
    h: list
    diff_norms: list
    samples: int
    failures: int = 0

    @property
    def rate(self) -> float:
        return uq.fit_rate(self.h[1:], self.diff_norms[1:])

    def rows(self):
        """``(level, h, diff_norm, rate)``; level 0 has no difference."""
        rows = []
        for l, (h, d) in enumerate(zip(self.h, self.diff_norms)):
            rate = (math.log(self.diff_norms[l - 1] / d, 2)
                    if l >= 2 and d > 0 else math.nan)
            rows.append((l, h, d, rate))
        return rows


def convergence_study(M0: int = 8, n_levels: int = 4, alpha: float = 1.0, n: float = 2.0,
                      samples: int = 32, seed: int = 0,
                      setup: uq.SampleSetup = uq.SampleSetup(), threads: int = 1,
                      dt_scale: float = 1.0) -> ConvergenceResult:
    """``E[||p_l - p_{l-1}||^2]^(1/2)`` per level from coupled samples.

    All levels share the baselines, so the differences measure the
    discretization error alone.  Needs at least three levels to fit a rate.
    """
    if n_levels < 3:
        raise ValueError("a convergence study needs at least three levels")
    specs = uq.build_levels(M0, n_levels, alpha, n, dt_scale=dt_scale)
    h = [s.h for s in specs]
    norms = [math.nan]
    failures = 0
    for l in range(1, n_levels):
        fn = partial(uq._indexed_sample, l, specs, setup, seed, 20)
        out = uq.fan_out(fn, range(samples), threads)
        failures += sum(nf for _, nf in out)
        sq = [uq.l2_norm(s.difference()) ** 2 for s, _ in out if not s.failed]
        norms.append(math.sqrt(float(np.mean(sq))))
    return ConvergenceResult(h, norms, samples, failures)


def write_convergence_csv(path, result: ConvergenceResult):
    return write_rows_csv(path, ["level", "h", "diff_norm", "rate"], result.rows())


@dataclass
class EstimatorComparison:
    pc: uq.MlmcResult
    std: uq.MlmcResult
    pc_wall: float
    std_wall: float
    extra: dict = field(default_factory=dict)

    @property
    def discrepancy(self) -> float:
        """``L2`` distance between the two mean fields."""
        return uq.l2_norm(self.pc.mean - self.std.mean)

    @property
    def speedup(self) -> float:
        return self.std_wall / self.pc_wall

    @property
    def work_speedup(self) -> float:
        return self.std.total_work / self.pc.total_work

    def to_dict(self, timing: bool = False) -> dict:
        d = {"pc_mlmc": self.pc.to_dict(timing), "std_mlmc": self.std.to_dict(timing),
             "mean_discrepancy_l2": self.discrepancy, "work_speedup": self.work_speedup}
        if timing:
            d.update(pc_wall=self.pc_wall, std_wall=self.std_wall, speedup=self.speedup)
        return d


def estimator_comparison(pc_specs, std_specs, eps: float, seed: int,
                         setup: uq.SampleSetup = uq.SampleSetup(),
                         **kw) -> EstimatorComparison:
    """Run both estimators on the same campaign seed and time them."""
    t0 = time.perf_counter()
    pc = uq.pc_mlmc(pc_specs, eps, seed, setup, **kw)
    t1 = time.perf_counter()
    std = uq.pc_mlmc(std_specs, eps, seed, setup, **kw)
    t2 = time.perf_counter()
    return EstimatorComparison(pc, std, t1 - t0, t2 - t1)
