"""Van Genuchten-Mualem closures, evaluated pointwise.

Every function broadcasts over numpy arrays, so per-cell parameter fields
can be passed directly.  ``m = 1 - 1/n`` is always derived from ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VGPoint:
    alpha: float
    n: float
    theta_s: float
    theta_r: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.n > 1:
            raise ValueError("n must exceed 1")
        if not self.theta_r < self.theta_s:
            raise ValueError("theta_r must be below theta_s")

    @property
    def m(self) -> float:
        return 1.0 - 1.0 / self.n


def _scaled_power(p, alpha, n):
    """``|alpha p|**n`` and ``|alpha p|**(n-1)`` for p < 0, zero elsewhere."""
    p, alpha, n = np.broadcast_arrays(
        np.asarray(p, float), np.asarray(alpha, float), np.asarray(n, float)
    )
    x = np.abs(alpha * p)
    unsat = (p < 0) & (x > 0)
    logx = np.log(np.where(unsat, x, 1.0))
    xn = np.where(unsat, np.exp(n * logx), 0.0)
    xn1 = np.where(unsat, np.exp((n - 1.0) * logx), 0.0)
    return xn, xn1, unsat


def saturation(p, alpha, n):
    """Effective saturation ``(1 + |alpha p|^n)^-m``, one for ``p >= 0``."""
    xn, _, _ = _scaled_power(p, alpha, n)
    m = 1.0 - 1.0 / np.asarray(n, float)
    return np.exp(-m * np.log1p(xn))


def moisture(p, alpha, n, theta_s, theta_r):
    return theta_r + (theta_s - theta_r) * saturation(p, alpha, n)


def capacity(p, alpha, n, theta_s, theta_r):
    """Specific moisture capacity ``d theta / d p`` (zero when saturated)."""
    xn, xn1, unsat = _scaled_power(p, alpha, n)
    n = np.asarray(n, float)
    m = 1.0 - 1.0 / n
    c = (theta_s - theta_r) * alpha * m * n * np.exp(-(m + 1.0) * np.log1p(xn)) * xn1
    return np.where(unsat, c, 0.0)


def rel_conductivity(p, alpha, n):
    """Mualem relative conductivity in closed form.

    Uses ``1 - S^(1/m) = x^n / (1 + x^n)`` to avoid cancellation near
    saturation.
    """
    xn, _, _ = _scaled_power(p, alpha, n)
    n = np.asarray(n, float)
    m = 1.0 - 1.0 / n
    s = np.exp(-m * np.log1p(xn))
    inner = 1.0 - np.exp(m * np.log(np.where(xn > 0, xn / (1.0 + xn), 1.0)))
    inner = np.where(xn > 0, inner, 1.0)
    return np.sqrt(s) * inner**2
