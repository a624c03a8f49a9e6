"""Monte Carlo, multilevel and parametric-continuation multilevel estimators.

A hierarchy is a list of :class:`LevelSpec`.  Level ``l`` carries its own
grid, time step and van Genuchten baselines ``(alpha_l, n_l)``; when all
baselines coincide the estimator is standard MLMC, otherwise coarse levels
solve milder nonlinear problems than the target on the finest level.

Sample ``i`` on level ``l`` draws white noise on the fine padded grid and
feeds its block-upscaled version to the coarse member, so both members
see the same random event.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from .grid import CellGrid, GridError, interpolate_bilinear, prolongate_to
from .randfield import (
    PHI1,
    MaternSpec,
    SoilBaselines,
    cached_sampler,
    draw_noise,
    soil_from_noise,
    upscale_noise_set,
)
from .solver import (
    BoundaryConditions,
    SolverOptions,
    infiltration_initial,
    solve_richards,
)

# first entry of every noise key; keeps the estimators' streams disjoint
STREAM_SAMPLE = 0
STREAM_REPLACEMENT = 1


class MlmcError(RuntimeError):
    """Campaign cannot proceed (too few successful samples on a level)."""


class InsufficientSamples(ValueError):
    pass


@dataclass(frozen=True)
class LevelSpec:
    level: int
    M: int
    dt: float
    alpha: float
    n: float
    warmup: int = 8

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def grid(self) -> CellGrid:
        return CellGrid(self.M)

    def to_dict(self) -> dict:
        return {"level": self.level, "M": self.M, "h": self.h, "dt": self.dt,
                "alpha": self.alpha, "n": self.n, "warmup": self.warmup}


def warmup_count(level: int, base: int = 64, decay: float = 4.0, floor: int = 8) -> int:
    return max(floor, math.ceil(base * decay ** (-level)))


def build_levels(M0: int, n_levels: int, alpha: float, n: float,
                 d_alpha: float = 0.0, d_n: float = 0.0, pin_finest: bool = False,
                 s: int = 2, dt_scale: float = 1.0, warmup=(64, 4.0, 8),
                 overrides=None) -> list[LevelSpec]:
    """Level hierarchy with linearly marched baselines.

    Level ``l`` gets ``alpha - k d_alpha`` and ``n + k d_n`` with
    ``k = L - l`` (or ``max(0, L - l - 1)`` when ``pin_finest`` keeps the two
    finest levels on the target).  ``overrides`` maps a level index to an
    explicit ``(alpha, n)`` pair.
    """
    if n_levels < 1:
        raise GridError("need at least one level")
    L = n_levels - 1
    overrides = dict(overrides or {})
    levels = []
    for l in range(n_levels):
        k = max(0, L - l - 1) if pin_finest else L - l
        a_l, n_l = overrides.get(l, (alpha - k * d_alpha, n + k * d_n))
        if not a_l > 0 or not n_l > 1:
            raise ValueError(f"level {l} baselines ({a_l}, {n_l}) are invalid")
        M = M0 * s**l
        levels.append(LevelSpec(l, M, dt_scale / M, float(a_l), float(n_l),
                                warmup_count(l, *warmup)))
    return levels


@dataclass(frozen=True)
class SampleSetup:
    """Everything a sample needs besides its level and index."""

    matern: MaternSpec = PHI1
    soil: SoilBaselines = SoilBaselines()
    t_final: float = 0.2
    bc: BoundaryConditions = BoundaryConditions()
    opts: SolverOptions = SolverOptions()
    padding: int = 2

    def baselines(self, spec: LevelSpec) -> SoilBaselines:
        return self.soil.with_theta(spec.alpha, spec.n)


@dataclass
class CoupledSample:
    level: int
    index: int
    fine: np.ndarray | None
    coarse: np.ndarray | None
    cycles_fine: int = 0
    cycles_coarse: int = 0
    work: float = 0.0
    wall: float = 0.0
    failed: bool = False
    reason: str | None = None
    clamped: int = 0
    attempt: int = 0

    def coarse_on_fine(self) -> np.ndarray:
        """Coarse member interpolated to the fine grid (zero on level 0)."""
        if self.coarse is None:
            return np.zeros_like(self.fine)
        return interpolate_bilinear(self.coarse, CellGrid(self.fine.shape[0]))

    def difference(self) -> np.ndarray:
        return self.fine - self.coarse_on_fine()


def _solve_member(spec: LevelSpec, noise: dict, setup: SampleSetup):
    sampler = cached_sampler(spec.M, setup.matern, setup.padding)
    soil = soil_from_noise(sampler, noise, setup.baselines(spec))
    p0 = infiltration_initial(spec.grid)
    return solve_richards(p0, soil, spec.dt, setup.t_final, setup.bc, setup.opts)


def coupled_sample(level: int, specs, setup: SampleSetup, seed: int, index: int,
                   attempt: int = 0) -> CoupledSample:
    """Solve the fine and coarse members of one coupled sample.

    ``attempt > 0`` draws from the reserved replacement stream.
    """
    spec = specs[level]
    key = ((STREAM_SAMPLE, level, index) if attempt == 0
           else (STREAM_REPLACEMENT, level, index, attempt))
    start = time.perf_counter()
    sampler = cached_sampler(spec.M, setup.matern, setup.padding)
    noise = draw_noise(seed, key, sampler.padded_shape)
    fine, fstats = _solve_member(spec, noise, setup)
    out = CoupledSample(level, index, fine.values, None, cycles_fine=fstats.cycles,
                        clamped=fstats.clamped, attempt=attempt)
    out.work = fstats.cycles * spec.M**2
    if fstats.failed:
        out.failed, out.reason = True, f"fine: {fstats.failure_reason}"
    elif level > 0:
        cspec = specs[level - 1]
        coarse, cstats = _solve_member(cspec, upscale_noise_set(noise), setup)
        out.coarse = coarse.values
        out.cycles_coarse = cstats.cycles
        out.work += cstats.cycles * cspec.M**2
        out.clamped += cstats.clamped
        if cstats.failed:
            out.failed, out.reason = True, f"coarse: {cstats.failure_reason}"
    out.wall = time.perf_counter() - start
    return out


def robust_sample(level: int, specs, setup: SampleSetup, seed: int, index: int,
                  max_attempts: int = 20):
    """Coupled sample ``index``, replacing failed draws from the reserved stream.

    Returns the sample (failed only if every attempt failed), the number of
    discarded failures and the work spent on them.
    """
    failures, lost_work, lost_wall = 0, 0.0, 0.0
    for attempt in range(max_attempts):
        smp = coupled_sample(level, specs, setup, seed, index, attempt)
        if not smp.failed:
            break
        failures += 1
        lost_work += smp.work
        lost_wall += smp.wall
    smp.work += lost_work if not smp.failed else 0.0
    smp.wall += lost_wall if not smp.failed else 0.0
    return smp, failures


def fan_out(fn, items, threads: int = 1) -> list:
    """Ordered map, in-process for one worker, otherwise over processes."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


def l2_norm(field: np.ndarray) -> float:
    """Discrete ``L2`` norm on the unit square."""
    field = np.asarray(field, dtype=float)
    h = 1.0 / field.shape[0]
    return float(math.sqrt(np.sum(field * field) * h * h))


def level_variance(samples) -> float:
    """Domain integral of the unbiased pointwise variance of the corrections."""
    diffs = [s.difference() for s in samples if not s.failed]
    if len(diffs) < 2:
        raise InsufficientSamples("level variance needs at least two samples")
    d = np.stack(diffs)
    h = 1.0 / d.shape[1]
    return float(np.var(d, axis=0, ddof=1).sum() * h * h)


def optimal_samples(variances, costs, eps: float, floor: int = 2) -> list[int]:
    """Lagrange-optimal sample counts for a sampling variance ``eps**2``."""
    v = np.asarray(variances, dtype=float)
    w = np.asarray(costs, dtype=float)
    if np.any(v < 0) or np.any(w <= 0) or eps <= 0:
        raise ValueError("variances must be >= 0, costs and eps > 0")
    total = np.sum(np.sqrt(v * w))
    raw = total * np.sqrt(v / w) / eps**2
    # guard the ceiling against round-off in exactly representable cases
    return [max(floor, math.ceil(x - 1e-9 * max(1.0, x))) for x in raw]


def _mean(arrs) -> np.ndarray:
    return np.mean(np.stack(arrs), axis=0)


def _var(arrs) -> np.ndarray:
    return np.var(np.stack(arrs), axis=0, ddof=1)


def _telescope(per_level, stat) -> np.ndarray:
    """Interpolate-and-add chain of per-level fine-minus-coarse statistics."""
    acc = None
    for samples in per_level:
        good = [s for s in samples if not s.failed]
        fine = stat([s.fine for s in good])
        if good[0].coarse is None:
            corr = fine
        else:
            corr = fine - interpolate_bilinear(stat([s.coarse for s in good]),
                                               CellGrid(fine.shape[0]))
        acc = corr if acc is None else prolongate_to(acc, CellGrid(fine.shape[0])) + corr
    return acc


def mlmc_mean_field(per_level) -> np.ndarray:
    return _telescope(per_level, _mean)


def mlmc_variance_field(per_level) -> np.ndarray:
    """Multilevel variance: per-level fine minus interpolated coarse sample variances.

    Individual cells may come out slightly negative on noisy levels; no
    truncation is applied.
    """
    for samples in per_level:
        if sum(not s.failed for s in samples) < 2:
            raise InsufficientSamples("variance field needs two samples per level")
    return _telescope(per_level, _var)


@dataclass
class LevelTelemetry:
    spec: LevelSpec
    samples: int = 0
    failures: int = 0
    variance: float = 0.0
    mean_cycles: float = 0.0
    mean_work: float = 0.0
    mean_wall: float = 0.0
    clamped: int = 0

    def to_dict(self, timing: bool = False) -> dict:
        d = {**self.spec.to_dict(), "samples": self.samples, "failures": self.failures,
             "level_variance": self.variance, "mean_cycles": self.mean_cycles,
             "mean_work": self.mean_work, "clamped_cells": self.clamped}
        if timing:
            d["mean_wall"] = self.mean_wall
        return d


@dataclass
class MlmcResult:
    mean: np.ndarray
    variance: np.ndarray
    levels: list = field(default_factory=list)
    eps: float = 0.0
    rounds: int = 0
    cost_model: str = "work"

    @property
    def samples(self) -> list[int]:
        return [t.samples for t in self.levels]

    @property
    def total_work(self) -> float:
        return float(sum(t.samples * t.mean_work for t in self.levels))

    @property
    def total_wall(self) -> float:
        return float(sum(t.samples * t.mean_wall for t in self.levels))

    @property
    def sampling_variance(self) -> float:
        return float(sum(t.variance / t.samples for t in self.levels))

    def to_dict(self, timing: bool = False) -> dict:
        """Telemetry; wall-clock fields only when ``timing`` is set."""
        d = {"eps": self.eps, "rounds": self.rounds, "cost_model": self.cost_model,
             "samples": self.samples, "total_work": self.total_work,
             "sampling_variance": self.sampling_variance,
             "failures": sum(t.failures for t in self.levels),
             "clamped_cells": sum(t.clamped for t in self.levels),
             "levels": [t.to_dict(timing) for t in self.levels]}
        if timing:
            d["total_wall"] = self.total_wall
        return d


def pc_mlmc(specs, eps: float, seed: int, setup: SampleSetup = SampleSetup(),
            threads: int = 1, cost_model: str = "work", max_rounds: int = 50,
            max_attempts: int = 20, progress=None) -> MlmcResult:
    """Adaptive multilevel estimator of the mean and variance fields.

    Runs warm-up samples, estimates level variances and costs, allocates
    ``N_l`` by :func:`optimal_samples` and adds samples until no level asks
    for more.  ``cost_model`` is ``"work"`` (W-cycles times cells, fully
    reproducible) or ``"walltime"`` (measured seconds per sample).
    """
    if cost_model not in ("work", "walltime"):
        raise ValueError(f"unknown cost model {cost_model!r}")
    specs = list(specs)
    for a, b in zip(specs, specs[1:]):
        if not b.M > a.M:
            raise GridError("levels must be ordered from coarse to fine")
    per_level = [[] for _ in specs]
    failures = [0] * len(specs)
    target = [s.warmup for s in specs]
    rounds = 0
    while True:
        for l, spec in enumerate(specs):
            have = len(per_level[l])
            if target[l] <= have:
                continue
            fn = partial(_indexed_sample, l, specs, setup, seed, max_attempts)
            for smp, nf in fan_out(fn, range(have, target[l]), threads):
                failures[l] += nf
                if smp.failed:
                    raise MlmcError(
                        f"level {l} sample {smp.index}: {max_attempts} consecutive "
                        f"failures ({smp.reason})")
                per_level[l].append(smp)
        rounds += 1
        var = [level_variance(p) for p in per_level]
        cost = [_level_cost(p, cost_model) for p in per_level]
        new = optimal_samples(var, cost, eps)
        if progress is not None:
            progress(rounds, [len(p) for p in per_level], new)
        if all(n <= len(p) for n, p in zip(new, per_level)) or rounds >= max_rounds:
            break
        target = [max(n, len(p)) for n, p in zip(new, per_level)]
    telemetry = [_telemetry(spec, p, nf) for spec, p, nf in zip(specs, per_level, failures)]
    return MlmcResult(mlmc_mean_field(per_level), mlmc_variance_field(per_level),
                      telemetry, eps, rounds, cost_model)


def _indexed_sample(level, specs, setup, seed, max_attempts, index):
    return robust_sample(level, specs, setup, seed, index, max_attempts)


def _level_cost(samples, cost_model) -> float:
    vals = [s.work if cost_model == "work" else s.wall for s in samples]
    return max(float(np.mean(vals)), 1e-12)


def _telemetry(spec, samples, failures) -> LevelTelemetry:
    return LevelTelemetry(
        spec, len(samples), failures, level_variance(samples),
        float(np.mean([s.cycles_fine + s.cycles_coarse for s in samples])),
        float(np.mean([s.work for s in samples])),
        float(np.mean([s.wall for s in samples])),
        int(sum(s.clamped for s in samples)),
    )


def monte_carlo(spec: LevelSpec, eps: float, seed: int,
                setup: SampleSetup = SampleSetup(), **kw) -> MlmcResult:
    """Plain Monte Carlo: a one-level hierarchy."""
    return pc_mlmc([replace(spec, level=0)], eps, seed, setup, **kw)


@dataclass(frozen=True)
class MseSplit:
    rate: float
    bias: float
    sampling_variance: float

    @property
    def total(self) -> float:
        return self.bias**2 + self.sampling_variance


def fit_rate(h, diff_norms) -> float:
    """Least-squares slope of ``log diff`` against ``log h``."""
    slope, _ = np.polyfit(np.log(np.asarray(h, float)),
                          np.log(np.asarray(diff_norms, float)), 1)
    return float(slope)


def mse_split(h, diff_norms, sampling_variance: float, s: int = 2) -> MseSplit:
    """Split the mean-square error into squared bias proxy and sampling variance.

    ``diff_norms[k]`` is the level difference norm at cell width ``h[k]``
    (one entry per level above the coarsest).  With fewer than two entries
    the rate cannot be fitted and first order is assumed.  A vanishing last
    difference gives a zero bias proxy.
    """
    diff_norms = [float(d) for d in diff_norms]
    if not diff_norms:
        raise InsufficientSamples("need at least one level difference")
    if diff_norms[-1] == 0.0:
        return MseSplit(math.nan, 0.0, float(sampling_variance))
    if len(diff_norms) < 2:
        warnings.warn("fewer than three levels; assuming first-order convergence",
                      stacklevel=2)
        rate = 1.0
    else:
        rate = fit_rate(h, diff_norms)
    if not rate > 0:
        raise ValueError(f"level differences do not decay (fitted rate {rate:.3g})")
    bias = diff_norms[-1] / (s**rate - 1.0)
    return MseSplit(rate, float(bias), float(sampling_variance))
