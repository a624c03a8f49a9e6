"""Correlated random soil fields.

Gaussian fields are drawn with the FFT moving-average method on a periodic
embedding of the grid; non-Gaussian marginals come from a truncated Hermite
chaos of a standard Gaussian field.  White noise lives on the padded grid
and can be block-averaged to the next coarser level so that coupled
multilevel samples share their randomness.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special, stats

from .grid import CellGrid

FIELD_NAMES = ("ks", "alpha", "n", "theta_s", "theta_r")


class EmbeddingError(RuntimeError):
    """The periodic covariance embedding is not positive semi-definite."""


@dataclass(frozen=True)
class MaternSpec:
    nu: float
    lambda_x: float
    lambda_z: float
    sigma2: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("Matern smoothness nu must be positive")
        if not (self.lambda_x > 0 and self.lambda_z > 0):
            raise ValueError("correlation lengths must be positive")
        if self.sigma2 < 0:
            raise ValueError("marginal variance must be non-negative")

    def as_tuple(self):
        return (self.nu, self.lambda_x, self.lambda_z, self.sigma2)


PHI1 = MaternSpec(1.0, 0.2, 0.2, 1.0)
PHI2 = MaternSpec(0.5, 0.1, 0.01, 1.0)
PRESETS = {"phi1": PHI1, "phi2": PHI2}


def matern_cov(dx, dz, spec: MaternSpec):
    """Anisotropic Matern covariance as a function of the offsets ``dx, dz``."""
    r = np.sqrt((np.asarray(dx, float) / spec.lambda_x) ** 2
                + (np.asarray(dz, float) / spec.lambda_z) ** 2)
    nu = spec.nu
    arg = 2.0 * math.sqrt(nu) * r
    with np.errstate(invalid="ignore", over="ignore"):
        val = (spec.sigma2 * 2.0 ** (1.0 - nu) / special.gamma(nu)
               * arg**nu * special.kv(nu, arg))
    # kv overflows at 0 and underflows far out; use the limits
    val = np.where(arg == 0.0, spec.sigma2, val)
    return np.where(np.isfinite(val), val, 0.0)


def matern_cov_points(x1, x2, spec: MaternSpec):
    """Covariance between two points ``(x, z)``."""
    return matern_cov(x1[0] - x2[0], x1[1] - x2[1], spec)


@dataclass(frozen=True, eq=False)
class FieldSampler:
    """Spectral square-root factor of the embedded covariance for one grid."""

    grid: CellGrid
    spec: MaternSpec
    factor: np.ndarray
    clipped_mass: float = 0.0

    @property
    def padded_shape(self) -> tuple[int, int]:
        return self.factor.shape


def build_sampler(grid: CellGrid, spec: MaternSpec, padding: int = 2,
                  clip_tol: float = 1e-6) -> FieldSampler:
    """Embed the covariance into a ``padding*M`` periodic grid and factor it.

    Negative spectral values are clipped to zero; if their total magnitude
    exceeds ``clip_tol`` of the total spectral mass, an ``EmbeddingError``
    asks for a larger padding.
    """
    P = padding * grid.M
    lag = np.arange(P)
    dist = np.minimum(lag, P - lag) * grid.h
    c = matern_cov(dist[:, None], dist[None, :], spec)
    spectrum = np.fft.fft2(c).real
    total = np.abs(spectrum).sum()
    negative = max(0.0, float(-spectrum[spectrum < 0].sum()))
    if total > 0 and negative > clip_tol * total:
        raise EmbeddingError(
            f"negative spectral mass {negative / total:.2e} of total on a "
            f"{P}x{P} embedding; increase the padding factor"
        )
    factor = np.sqrt(np.clip(spectrum, 0.0, None))
    return FieldSampler(grid, spec, factor, float(negative / total) if total else 0.0)


@functools.lru_cache(maxsize=64)
def cached_sampler(M: int, spec: MaternSpec, padding: int = 2) -> FieldSampler:
    return build_sampler(CellGrid(M), spec, padding)


def sample_gaussian(sampler: FieldSampler, y: np.ndarray) -> np.ndarray:
    """Map padded white noise ``y`` to a correlated field on the physical grid."""
    y = np.asarray(y, dtype=float)
    if y.shape != sampler.padded_shape:
        raise ValueError(
            f"noise shape {y.shape} does not match padding {sampler.padded_shape}"
        )
    z = np.fft.ifft2(sampler.factor * np.fft.fft2(y)).real
    M = sampler.grid.M
    return z[:M, :M].copy()


def upscale_noise(y: np.ndarray) -> np.ndarray:
    """Sum each 2x2 block and divide by 2; keeps entries standard normal."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[0] % 2 or y.shape[1] % 2:
        raise ValueError(f"noise dimensions must be even, got {y.shape}")
    return 0.5 * (y[0::2, 0::2] + y[0::2, 1::2] + y[1::2, 0::2] + y[1::2, 1::2])


def hermite(j: int, z):
    """Probabilists' Hermite polynomial ``He_j(z)`` by three-term recurrence."""
    if j < 0:
        raise ValueError("Hermite order must be non-negative")
    z = np.asarray(z, dtype=float)
    prev, cur = np.ones_like(z), z.copy()
    if j == 0:
        return prev
    for k in range(1, j):
        prev, cur = cur, z * cur - k * prev
    return cur


def gpc_weights(ppf, order: int, nodes: int = 128) -> np.ndarray:
    """Hermite chaos weights of ``Y = ppf(Phi(Z))`` up to ``order``.

    ``w_j = E[Y He_j(Z)] / j!`` evaluated by Gauss-Hermite quadrature.
    """
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / math.sqrt(2.0 * math.pi)
    y = ppf(stats.norm.cdf(x))
    if not np.all(np.isfinite(y)):
        raise ValueError("inverse CDF is not finite on the quadrature nodes")
    return np.array([np.sum(w * y * hermite(j, x)) / math.factorial(j)
                     for j in range(order + 1)])


@dataclass(frozen=True, eq=False)
class MarginalSpec:
    """Target marginal for a pointwise transform of a standard normal field."""

    kind: str = "normal"
    a: float = 0.0
    b: float = 1.0
    order: int = 6
    weights: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("normal", "uniform"):
            raise ValueError(f"unsupported marginal kind {self.kind!r}")
        if self.kind == "uniform" and not self.a < self.b:
            raise ValueError("uniform marginal needs a < b")
        if self.weights is None:
            if self.kind == "normal":
                w = np.zeros(max(self.order, 1) + 1)
                w[1] = 1.0
            else:
                dist = stats.uniform(loc=self.a, scale=self.b - self.a)
                w = gpc_weights(dist.ppf, self.order)
            object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, a, b, order=6):
        return cls("uniform", a, b, order)


def to_nongaussian(z: np.ndarray, spec: MarginalSpec) -> np.ndarray:
    if spec.kind == "normal":
        return np.asarray(z, dtype=float).copy()
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    prev, cur = np.ones_like(z), z
    out += spec.weights[0] * prev
    for j in range(1, len(spec.weights)):
        out += spec.weights[j] * cur
        prev, cur = cur, z * cur - j * prev
    return out


@dataclass(frozen=True)
class SoilBaselines:
    """Baseline values and half-widths of the uniform perturbations.

    A zero half-width turns the corresponding field deterministic.
    """

    ks: float = 0.2
    alpha: float = 1.0
    n: float = 2.0
    theta_s: float = 0.5
    theta_r: float = 0.05
    d_alpha: float = 0.2
    d_n: float = 0.05
    d_theta_s: float = 0.05
    d_theta_r: float = 0.005
    random_ks: bool = True
    n_pc: int = 6

    def __post_init__(self):
        if not self.ks > 0:
            raise ValueError("ks baseline must be positive")
        if not self.alpha - self.d_alpha > 0:
            raise ValueError("alpha must stay positive under its perturbation")
        if not self.n > 1:
            raise ValueError("n must exceed 1")
        if not self.n - self.d_n > 1:
            raise ValueError("n must exceed 1 under its perturbation")
        if not self.theta_r + self.d_theta_r < self.theta_s - self.d_theta_s:
            raise ValueError("theta_r must stay below theta_s under perturbations")
        for name in ("d_alpha", "d_n", "d_theta_s", "d_theta_r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def with_theta(self, alpha, n) -> "SoilBaselines":
        return replace(self, alpha=alpha, n=n)

    @classmethod
    def deterministic(cls, **kw) -> "SoilBaselines":
        kw = {"d_alpha": 0.0, "d_n": 0.0, "d_theta_s": 0.0, "d_theta_r": 0.0,
              "random_ks": False, **kw}
        return cls(**kw)


@dataclass
class SoilRealization:
    grid: CellGrid
    ks: np.ndarray
    alpha: np.ndarray
    n: np.ndarray
    theta_s: np.ndarray
    theta_r: np.ndarray
    clamped: int = 0

    def fields(self) -> dict:
        return {name: getattr(self, name) for name in FIELD_NAMES}

    def check(self):
        if not (np.all(self.ks > 0) and np.all(self.alpha > 0)
                and np.all(self.n > 1) and np.all(self.theta_r < self.theta_s)):
            raise ValueError("soil realization violates its invariants")


@functools.lru_cache(maxsize=64)
def _uniform_marginal(half_width: float, order: int) -> MarginalSpec:
    return MarginalSpec.uniform(-half_width, half_width, order)


def draw_noise(seed: int, key: tuple, padded_shape) -> dict:
    """One padded white-noise array per soil field.

    Each field gets its own stream keyed by ``key + (field index,)``.
    """
    return {name: seed_rng(seed, *key, k).standard_normal(padded_shape)
            for k, name in enumerate(FIELD_NAMES)}


def upscale_noise_set(noise: dict) -> dict:
    return {name: upscale_noise(y) for name, y in noise.items()}


def soil_from_noise(sampler: FieldSampler, noise: dict,
                    base: SoilBaselines) -> SoilRealization:
    """Assemble the five soil fields from padded white noise.

    ``ks`` is lognormal around its baseline; the van Genuchten parameters
    get additive uniform-marginal perturbations correlated by the same
    covariance (normalized to unit variance).  Chaos truncation can
    overshoot the uniform support; such cells are clamped and counted.
    """
    grid = sampler.grid
    sigma = math.sqrt(sampler.spec.sigma2)
    clamped = 0

    if base.random_ks:
        ks = base.ks * np.exp(sample_gaussian(sampler, noise["ks"]))
    else:
        ks = np.full(grid.shape, base.ks)

    def perturbed(name, baseline, half_width):
        nonlocal clamped
        if half_width == 0.0 or sigma == 0.0:
            return np.full(grid.shape, baseline)
        z = sample_gaussian(sampler, noise[name]) / sigma
        eps = to_nongaussian(z, _uniform_marginal(half_width, base.n_pc))
        out = np.clip(eps, -half_width, half_width)
        clamped += int(np.count_nonzero(out != eps))
        return baseline + out

    soil = SoilRealization(
        grid,
        ks,
        perturbed("alpha", base.alpha, base.d_alpha),
        perturbed("n", base.n, base.d_n),
        perturbed("theta_s", base.theta_s, base.d_theta_s),
        perturbed("theta_r", base.theta_r, base.d_theta_r),
    )
    soil.clamped = clamped
    soil.check()
    return soil


def seed_rng(campaign_seed: int, *key: int) -> np.random.Generator:
    """Independent, reproducible stream for a tuple of non-negative ints."""
    ss = np.random.SeedSequence(entropy=int(campaign_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def sample_soil(grid: CellGrid, base: SoilBaselines, spec: MaternSpec,
                seed: int, padding: int = 2) -> SoilRealization:
    sampler = cached_sampler(grid.M, spec, padding)
    noise = draw_noise(seed, (), sampler.padded_shape)
    return soil_from_noise(sampler, noise, base)
