import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from richards_mlmc import _kernels as kern
from richards_mlmc.constitutive import moisture
from richards_mlmc.grid import CellGrid, interpolate_bilinear
from richards_mlmc.randfield import PHI1, SoilBaselines, SoilRealization, sample_soil
from richards_mlmc.solver import (
    BoundaryConditions,
    InnerSolverDivergence,
    InnerSystem,
    MgHierarchy,
    NonlinearFailure,
    SingularSystemError,
    SolverOptions,
    assemble_inner,
    coarsen_coefficients,
    infiltration_initial,
    picard_time_step,
    smooth_gauss_seidel,
    solve_inner,
    solve_richards,
    time_steps,
    w_cycle,
)
from richards_mlmc.uq import l2_norm


def uniform_soil(M, ks=0.2, alpha=1.0, n=2.0):
    shape = (M, M)
    return SoilRealization(CellGrid(M), np.full(shape, ks), np.full(shape, alpha),
                           np.full(shape, n), np.full(shape, 0.5), np.full(shape, 0.05))


def poisson_system(M, rhs=None, cdt=0.0):
    """Homogeneous Dirichlet top/bottom, no-flux sides, unit conductivity."""
    ax = np.ones((M + 1, M))
    ax[0] = ax[-1] = 0.0
    az = np.ones((M, M + 1))
    az[:, 0] = az[:, -1] = 2.0
    rhs = np.zeros((M, M)) if rhs is None else rhs
    return InnerSystem(1.0 / M, ax, az, np.full((M, M), float(cdt)), rhs,
                       np.ones((M, M)), np.zeros((M, M)))


def random_system(M, seed):
    rng = np.random.default_rng(seed)
    sys = poisson_system(M, rng.standard_normal((M, M)), cdt=0.0)
    sys.ax[1:-1] = np.exp(2 * rng.standard_normal((M - 1, M)))
    sys.az[:, 1:-1] = np.exp(2 * rng.standard_normal((M, M - 1)))
    sys.az[:, 0] = 2 * np.exp(rng.standard_normal(M))
    sys.cdt[:] = rng.uniform(0, 5, (M, M))
    return sys


# -- assembly -------------------------------------------------------------

def test_homogeneous_stencil():
    M = 8
    soil = uniform_soil(M, ks=1.0)
    p = np.full((M, M), 0.2)  # saturated: K = ks everywhere, C = 0
    sys = assemble_inner(p, moisture(p, 1.0, 2.0, 0.5, 0.05), soil, 0.1, BoundaryConditions())
    c, w, e, s, n = sys.stencil()
    h2 = sys.h**2
    np.testing.assert_allclose(w[1:], -1 / h2)
    np.testing.assert_allclose(e[:-1], -1 / h2)
    np.testing.assert_allclose(s[:, 1:], -1 / h2)
    np.testing.assert_allclose(n[:, :-1], -1 / h2)
    interior = np.s_[1:-1, 1:-1]
    np.testing.assert_allclose((c + w + e + s + n)[interior], 0.0, atol=1e-9)
    assert np.all(c > 0)


def test_harmonic_face_coefficient():
    M = 4
    soil = uniform_soil(M)
    soil.ks[:2] = 1.0
    soil.ks[2:] = 3.0
    p = np.full((M, M), 0.1)
    sys = assemble_inner(p, np.full((M, M), 0.5), soil, 1.0, BoundaryConditions())
    _, w, e, _, _ = sys.stencil()
    np.testing.assert_allclose(e[1], -1.5 / sys.h**2)
    np.testing.assert_allclose(w[2], -1.5 / sys.h**2)


def test_exact_state_has_zero_rhs():
    M = 8
    bc = BoundaryConditions(bottom=-0.3, top=-0.3, gravity=False)
    soil = sample_soil(CellGrid(M), SoilBaselines(), PHI1, 0)
    p = np.full((M, M), -0.3)
    theta = moisture(p, soil.alpha, soil.n, soil.theta_s, soil.theta_r)
    sys = assemble_inner(p, theta, soil, 0.1, bc)
    assert np.abs(sys.rhs).max() < 1e-12
    du, cycles = solve_inner(sys)
    assert cycles == 0 and np.all(du == 0)


def test_hydrostatic_state_with_gravity_is_steady():
    M = 8
    z = CellGrid(M).centers
    p = np.tile(0.1 - z, (M, 1))  # p + z constant: no flow
    bc = BoundaryConditions(bottom=0.1, top=-0.9)
    soil = uniform_soil(M)
    sys = assemble_inner(p, moisture(p, 1.0, 2.0, 0.5, 0.05), soil, 0.1, bc)
    assert np.abs(sys.rhs).max() < 1e-12


@given(st.integers(0, 10_000))
@settings(max_examples=25)
def test_rows_without_capacity_conserve(seed):
    sys = random_system(8, seed)
    sys.cdt[:] = 0.0
    c, w, e, s, n = sys.stencil()
    assert np.all(w <= 0) and np.all(e <= 0) and np.all(s <= 0) and np.all(n <= 0)
    interior = np.s_[1:-1, 1:-1]
    np.testing.assert_allclose((c + w + e + s + n)[interior], 0.0, atol=1e-8 * c.max())


# -- smoother and multigrid ----------------------------------------------

def test_gauss_seidel_fixed_point():
    sys = random_system(8, 1)
    u = np.random.default_rng(2).standard_normal((8, 8))
    sys.rhs = sys.apply(u)
    np.testing.assert_allclose(smooth_gauss_seidel(sys, u.copy(), sweeps=3), u, atol=1e-12)


def test_gauss_seidel_hand_sweep():
    # 3x3, unit faces, h = 1: diagonal 2 + 2*(Dirichlet faces) in z
    sys = poisson_system(3, rhs=np.arange(9.0).reshape(3, 3))
    sys.h = 1.0
    u = np.zeros((3, 3))
    expected = np.zeros((3, 3))
    f = sys.rhs
    for i in range(3):
        for j in range(3):
            diag = sys.ax[i, j] + sys.ax[i + 1, j] + sys.az[i, j] + sys.az[i, j + 1]
            acc = f[i, j]
            acc += expected[i - 1, j] * sys.ax[i, j] if i > 0 else 0.0
            acc += expected[i, j - 1] * sys.az[i, j] if j > 0 else 0.0
            expected[i, j] = acc / diag
    np.testing.assert_allclose(smooth_gauss_seidel(sys, u, sweeps=1), expected, rtol=1e-15)
    # first cell by hand: f=0 -> 0; cell (0,1): 1 / (1 + 1 + 1) after (0,0)=0
    assert expected[0, 1] == pytest.approx(1 / 3)


def test_gauss_seidel_zero_diagonal():
    sys = poisson_system(4)
    sys.ax[:] = 0.0
    sys.az[:] = 0.0
    with pytest.raises(SingularSystemError):
        smooth_gauss_seidel(sys, np.zeros((4, 4)))


@given(st.integers(0, 100_000))
@settings(max_examples=100)
def test_gauss_seidel_residual_nonincreasing(seed):
    sys = random_system(6, seed)
    u = np.zeros((6, 6))
    # measured in the energy norm the iteration contracts monotonically
    d = sys.stencil()[0]

    def energy(u):
        r = sys.rhs - sys.apply(u)
        return float(np.sum(r * r / d))

    prev = energy(u)
    for _ in range(5):
        smooth_gauss_seidel(sys, u)
        cur = energy(u)
        assert cur <= prev * (1 + 1e-12)
        prev = cur


def test_coarsen_coefficients_examples():
    ax = np.full((9, 8), 2.5)
    az = np.full((8, 9), 2.5)
    axc, azc = coarsen_coefficients(ax, az)
    assert axc.shape == (5, 4) and azc.shape == (4, 5)
    assert np.all(axc == 2.5) and np.all(azc == 2.5)
    ax = np.ones((3, 2))
    ax[:, 1] = 3.0
    axc, _ = coarsen_coefficients(ax, np.ones((2, 3)))
    np.testing.assert_array_equal(axc, [[2.0], [2.0]])


def test_three_level_upscaling_matches_direct_means():
    M = 8
    ax = np.tile(np.where(np.arange(M) % 2, 1.0, 5.0), (M + 1, 1))  # striped in z
    az = np.tile(np.arange(M + 1.0), (M, 1))
    a1, z1 = coarsen_coefficients(ax, az)
    a2, z2 = coarsen_coefficients(a1, z1)
    # every coarsest x-face averages the four fine faces it spans
    for I in range(3):
        for J in range(2):
            assert a2[I, J] == pytest.approx(ax[4 * I, 4 * J:4 * J + 4].mean())
    for I in range(2):
        for J in range(3):
            assert z2[I, J] == pytest.approx(az[4 * I:4 * I + 4, 4 * J].mean())


def test_w_cycle_zero_and_transfer_identities():
    sys = poisson_system(16)
    hier = MgHierarchy(sys)
    u = np.zeros((16, 16))
    w_cycle(hier, 0, np.zeros((16, 16)), u)
    assert np.all(u == 0)
    fine = np.zeros((8, 8))
    kern.prolong_add(fine, np.full((4, 4), 0.7))
    coarse = np.empty((4, 4))
    kern.restrict(fine, coarse)
    np.testing.assert_allclose(coarse, 0.7)


@pytest.mark.parametrize("M", [32, 64])
def test_w_cycle_contraction_on_poisson(M):
    rng = np.random.default_rng(M)
    sys = poisson_system(M, rng.standard_normal((M, M)))
    hier = MgHierarchy(sys)
    u = np.zeros((M, M))
    r0 = np.abs(sys.rhs).max()
    for _ in range(4):
        w_cycle(hier, 0, sys.rhs, u)
        r1 = np.abs(sys.rhs - sys.apply(u)).max()
        assert r1 / r0 <= 0.2
        r0 = r1


def test_solve_inner_zero_rhs_is_free():
    du, cycles = solve_inner(poisson_system(16))
    assert cycles == 0 and np.all(du == 0)


def test_solve_inner_manufactured_solution():
    grid = CellGrid(32)
    soil = sample_soil(grid, SoilBaselines(), PHI1, 5)
    p = infiltration_initial(grid)
    sys = assemble_inner(p, moisture(p, soil.alpha, soil.n, soil.theta_s, soil.theta_r),
                         soil, 1 / 32, BoundaryConditions())
    X, Z = grid.meshgrid()
    exact = np.sin(3 * X) * Z * (1 - Z)
    sys.rhs = sys.apply(exact)
    du, cycles = solve_inner(sys)
    assert 0 < cycles <= 20
    assert np.abs(du - exact).max() < 1e-4


def test_solve_inner_cycle_cap():
    sys = random_system(16, 3)
    with pytest.raises(InnerSolverDivergence) as info:
        solve_inner(sys, SolverOptions(eps_mg=1e-300, max_cycles=2))
    assert info.value.cycles == 2


# -- time stepping -------------------------------------------------------------

def test_time_steps():
    assert time_steps(0.25, 1.0) == [0.25] * 4
    steps = time_steps(1 / 64, 0.1)
    assert len(steps) == 7 and sum(steps) == pytest.approx(0.1)
    assert 0 < steps[-1] < 1 / 64


def test_steady_saturated_state_converges_at_once():
    M = 8
    bc = BoundaryConditions(bottom=0.1, top=0.1, gravity=False)
    soil = uniform_soil(M)
    p = np.full((M, M), 0.1)
    res = picard_time_step(p, moisture(p, 1.0, 2.0, 0.5, 0.05), soil, 0.1, bc)
    assert res.iterations == 1 and res.cycles == 0
    np.testing.assert_array_equal(res.p, p)


def test_infiltration_mass_balance_and_bounds():
    M = 32
    soil = uniform_soil(M)
    p, stats = solve_richards(infiltration_initial(CellGrid(M)), soil, 1 / 64, 0.1)
    assert not stats.failed and stats.steps == 7
    assert max(stats.mass_error) <= 10 * SolverOptions().eps_pi
    assert p.values.min() >= -0.4 and p.values.max() <= 0.1
    assert p.t == pytest.approx(0.1)


def test_single_step_when_t_final_equals_dt():
    soil = uniform_soil(16)
    _, stats = solve_richards(infiltration_initial(CellGrid(16)), soil, 0.05, 0.05)
    assert stats.steps == 1


def test_cycle_total_is_sum_over_steps():
    M = 16
    soil = uniform_soil(M)
    p0 = infiltration_initial(CellGrid(M))
    theta = moisture(p0, 1.0, 2.0, 0.5, 0.05)
    total, p = 0, p0
    for k, dt in enumerate(time_steps(1 / 16, 0.2)):
        res = picard_time_step(p, theta, soil, dt, step=k)
        total += res.cycles
        p, theta = res.p, res.theta
    _, stats = solve_richards(p0, soil, 1 / 16, 0.2)
    assert stats.cycles == total


def test_easy_parameters_converge_quickly():
    soil = sample_soil(CellGrid(32), SoilBaselines.deterministic(alpha=0.2, n=4.0,
                                                                 random_ks=True), PHI1, 3)
    _, stats = solve_richards(infiltration_initial(CellGrid(32)), soil, 1 / 64, 0.1)
    assert not stats.failed
    assert max(stats.picard) <= 10


def test_nonlinear_failure_is_flagged_with_cost():
    soil = uniform_soil(16, alpha=4.0)
    p0 = infiltration_initial(CellGrid(16))
    with pytest.raises(NonlinearFailure) as info:
        picard_time_step(p0, moisture(p0, 4.0, 2.0, 0.5, 0.05), soil, 1 / 16,
                         opts=SolverOptions(max_nl=2), step=0)
    assert info.value.step == 0 and info.value.cycles > 0
    _, stats = solve_richards(p0, soil, 1 / 16, 0.2, opts=SolverOptions(max_nl=2))
    assert stats.failed and stats.failure_step == 0 and stats.cycles > 0


def test_converged_step_solves_the_nonlinear_equations():
    M = 16
    soil = sample_soil(CellGrid(M), SoilBaselines(), PHI1, 8)
    p0 = infiltration_initial(CellGrid(M))
    th0 = moisture(p0, soil.alpha, soil.n, soil.theta_s, soil.theta_r)
    res = picard_time_step(p0, th0, soil, 1 / 16, opts=SolverOptions(eps_pi=1e-9, eps_mg=1e-10))
    sys = assemble_inner(res.p, th0, soil, 1 / 16, BoundaryConditions())
    # residual of the backward Euler equations, scaled like the update size
    assert np.abs(sys.rhs).max() < 1e-5


def test_refinement_is_first_order():
    diffs, prev = [], None
    for M in (16, 32, 64, 128):
        p, stats = solve_richards(infiltration_initial(CellGrid(M)), uniform_soil(M), 1 / M, 0.1)
        assert not stats.failed
        if prev is not None:
            diffs.append(l2_norm(p.values - interpolate_bilinear(prev, CellGrid(M))))
        prev = p.values
    rate = np.polyfit(np.log([1 / 32, 1 / 64, 1 / 128]), np.log(diffs), 1)[0]
    assert 0.7 <= rate <= 1.3
