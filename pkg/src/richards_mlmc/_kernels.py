"""Compiled inner loops of the cell-centered multigrid solver.

Face coefficients are stored as effective conductivities: ``ax`` has shape
``(M+1, M)`` (x-faces), ``az`` has shape ``(M, M+1)`` (z-faces).  The
five-point operator on a level with width ``h`` is

    (L u)_ij = (sum of the four face values / h^2 + cdt_ij) u_ij
               - sum over interior faces (face / h^2) * u_neighbour

so boundary faces enter the diagonal only (homogeneous Dirichlet when the
face value is non-zero, Neumann when it is zero).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def gauss_seidel(u, f, ax, az, cdt, h, sweeps):
    M = u.shape[0]
    ih2 = 1.0 / (h * h)
    for _ in range(sweeps):
        for i in range(M):
            for j in range(M):
                w = ax[i, j]
                e = ax[i + 1, j]
                s = az[i, j]
                n = az[i, j + 1]
                diag = (w + e + s + n) * ih2 + cdt[i, j]
                acc = f[i, j]
                if i > 0:
                    acc += w * ih2 * u[i - 1, j]
                if i < M - 1:
                    acc += e * ih2 * u[i + 1, j]
                if j > 0:
                    acc += s * ih2 * u[i, j - 1]
                if j < M - 1:
                    acc += n * ih2 * u[i, j + 1]
                u[i, j] = acc / diag


@njit(cache=True)
def residual(u, f, ax, az, cdt, h, out):
    M = u.shape[0]
    ih2 = 1.0 / (h * h)
    for i in range(M):
        for j in range(M):
            w = ax[i, j]
            e = ax[i + 1, j]
            s = az[i, j]
            n = az[i, j + 1]
            lu = ((w + e + s + n) * ih2 + cdt[i, j]) * u[i, j]
            if i > 0:
                lu -= w * ih2 * u[i - 1, j]
            if i < M - 1:
                lu -= e * ih2 * u[i + 1, j]
            if j > 0:
                lu -= s * ih2 * u[i, j - 1]
            if j < M - 1:
                lu -= n * ih2 * u[i, j + 1]
            out[i, j] = f[i, j] - lu


@njit(cache=True)
def max_abs(a):
    m = 0.0
    for v in a.ravel():
        av = abs(v)
        if av > m or av != av:
            m = av
    return m


@njit(cache=True)
def restrict(r, out):
    Mc = out.shape[0]
    for I in range(Mc):
        for J in range(Mc):
            out[I, J] = 0.25 * (r[2 * I, 2 * J] + r[2 * I + 1, 2 * J]
                                + r[2 * I, 2 * J + 1] + r[2 * I + 1, 2 * J + 1])


@njit(cache=True)
def prolong_add(u, ec):
    Mc = ec.shape[0]
    for I in range(Mc):
        for J in range(Mc):
            v = ec[I, J]
            u[2 * I, 2 * J] += v
            u[2 * I + 1, 2 * J] += v
            u[2 * I, 2 * J + 1] += v
            u[2 * I + 1, 2 * J + 1] += v


@njit(cache=True)
def coarsen_faces(ax, az):
    """Coarse faces are arithmetic means of the two fine faces they contain."""
    M = az.shape[0]
    Mc = M // 2
    axc = np.empty((Mc + 1, Mc))
    azc = np.empty((Mc, Mc + 1))
    for I in range(Mc + 1):
        for J in range(Mc):
            axc[I, J] = 0.5 * (ax[2 * I, 2 * J] + ax[2 * I, 2 * J + 1])
    for I in range(Mc):
        for J in range(Mc + 1):
            azc[I, J] = 0.5 * (az[2 * I, 2 * J] + az[2 * I + 1, 2 * J])
    return axc, azc
