import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stfe import Grid, GridFunction, NoiseModel, PeriodicOperator, solve_banded_periodic
from stfe.errors import GridMismatchError, SolverFailure
from stfe.grid import PeriodicBandedLU, backward_diff, derivative, forward_diff, inner_l2, quadrature, third_diff_interface

TWO_PI = 2 * math.pi
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_grid_geometry():
    g = Grid(2.0, 8)
    assert g.dx == 0.25
    np.testing.assert_array_equal(g.x, np.arange(8) * 0.25)
    np.testing.assert_allclose(g.x_half, g.x + 0.125)


@pytest.mark.parametrize("L, M", [(0.0, 16), (-1.0, 16), (1.0, 7), (1.0, 12.5), (math.inf, 16)])
def test_grid_rejects_bad_parameters(L, M):
    with pytest.raises(ValueError):
        Grid(L, M)


def test_gridfunction_validates(grid):
    with pytest.raises(ValueError):
        GridFunction(grid, np.zeros(grid.M - 1))
    vals = np.ones(grid.M)
    vals[3] = np.nan
    with pytest.raises(ValueError):
        GridFunction(grid, vals)


def test_gridfunction_arithmetic_and_mismatch(grid, small_grid):
    f = grid.sample(np.sin)
    g = grid.sample(np.cos)
    np.testing.assert_allclose((2 * f + g - 1).values, 2 * np.sin(grid.x) + np.cos(grid.x) - 1)
    with pytest.raises(GridMismatchError):
        f + small_grid.sample(np.sin)
    with pytest.raises(GridMismatchError):
        inner_l2(f, small_grid.sample(np.sin))


@pytest.mark.parametrize("order", [1, 2, 3, 4])
@pytest.mark.parametrize("accuracy", [2, 4])
def test_derivative_of_constant_vanishes(grid, order, accuracy):
    d = derivative(GridFunction(grid, np.full(grid.M, 3.7)), order, accuracy)
    # stencil weights do not sum to exactly zero in floating point
    assert np.max(np.abs(d.values)) <= 1e-13 * grid.dx**-order


@pytest.mark.parametrize(
    "order, exact",
    [(1, np.cos), (2, lambda x: -np.sin(x)), (3, lambda x: -np.cos(x)), (4, np.sin)],
)
def test_derivative_of_sine(grid, order, exact):
    d = derivative(grid.sample(np.sin), order)
    assert np.max(np.abs(d.values - exact(grid.x))) <= 1e-3


def test_derivative_rejects_bad_order(grid):
    with pytest.raises(ValueError):
        derivative(grid.sample(np.sin), 5)
    with pytest.raises(ValueError):
        derivative(grid.sample(np.sin), 1, accuracy=6)


def test_derivative_of_basis_mode(grid):
    model = NoiseModel.from_spectrum(TWO_PI, K=1)
    P = model.psi(grid.x)
    d = derivative(GridFunction(grid, P[2]), 1)  # psi_1
    np.testing.assert_allclose(d.values, 1.0 * P[0], atol=1e-4)  # (2 pi/L) psi_-1


@pytest.mark.parametrize("order, accuracy, min_ratio", [(1, 2, 3.5), (2, 2, 3.5), (1, 4, 14.0)])
def test_derivative_convergence_order(order, accuracy, min_ratio):
    errs = []
    for M in (32, 64, 128, 256):
        g = Grid(TWO_PI, M)
        exact = np.cos(g.x) if order == 1 else -np.sin(g.x)
        errs.append(np.max(np.abs(derivative(g.sample(np.sin), order, accuracy).values - exact)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios >= min_ratio)


def test_interface_differences(grid):
    f = grid.sample(np.sin)
    np.testing.assert_allclose(forward_diff(f.values, grid.dx), np.cos(grid.x_half), atol=1e-4)
    np.testing.assert_allclose(third_diff_interface(f.values, grid.dx), -np.cos(grid.x_half), atol=1e-3)
    # backward difference of the forward difference is the 3-point Laplacian
    lap = backward_diff(forward_diff(f.values, grid.dx), grid.dx)
    np.testing.assert_allclose(lap, derivative(f, 2).values, atol=1e-10)


@given(arrays(float, 16, elements=finite), st.integers(-20, 20), st.sampled_from([1, 2, 3, 4]))
def test_derivative_commutes_with_shift(values, n, order):
    g = Grid(1.0, 16)
    f = GridFunction(g, values)
    np.testing.assert_array_equal(derivative(f.shift(n), order).values, derivative(f, order).shift(n).values)


@given(arrays(float, 16, elements=finite), arrays(float, 16, elements=finite), finite, finite)
def test_derivative_is_linear(a_vals, b_vals, a, b):
    g = Grid(1.0, 16)
    f, h = GridFunction(g, a_vals), GridFunction(g, b_vals)
    lhs = derivative(a * f + b * h, 2).values
    rhs = a * derivative(f, 2).values + b * derivative(h, 2).values
    scale = 1 + np.max(np.abs(lhs)) + np.max(np.abs(rhs))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


def test_quadrature_examples(grid):
    assert quadrature(GridFunction(Grid(2.0, 16), np.ones(16))) == pytest.approx(2.0, abs=1e-15)
    assert abs(quadrature(grid.sample(np.sin))) < 1e-14
    psi = NoiseModel.from_spectrum(TWO_PI, K=1).psi(grid.x)
    assert quadrature(GridFunction(grid, psi[2] ** 2)) == pytest.approx(1 / 3, abs=1e-10)


def test_inner_product_examples(grid):
    psi = NoiseModel.from_spectrum(TWO_PI, K=1).psi(grid.x)
    p1, pm1 = GridFunction(grid, psi[2]), GridFunction(grid, psi[0])
    assert inner_l2(GridFunction(grid, np.zeros(grid.M)), p1) == 0.0
    assert abs(inner_l2(p1, pm1)) < 1e-12
    assert inner_l2(p1, p1) == pytest.approx(1 / 3, abs=1e-10)


@given(arrays(float, 16, elements=finite), arrays(float, 16, elements=finite))
def test_inner_product_symmetric(a, b):
    g = Grid(3.0, 16)
    assert inner_l2(GridFunction(g, a), GridFunction(g, b)) == inner_l2(GridFunction(g, b), GridFunction(g, a))


# -- operators and solves --


def _random_op(rng, M, p, dominance=2.0):
    bands = rng.standard_normal((M, 2 * p + 1))
    bands[:, p] = dominance * np.sum(np.abs(bands), axis=1)
    return PeriodicOperator(bands)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_operator_dense_matches_apply(rng, p):
    op = _random_op(rng, 20, p)
    v = rng.standard_normal(20)
    np.testing.assert_allclose(op.apply(v), op.to_dense() @ v, rtol=1e-13)
    np.testing.assert_allclose(op.column_sums(), op.to_dense().sum(axis=0), rtol=1e-13)


def test_operator_algebra(rng):
    a, b = _random_op(rng, 16, 1), _random_op(rng, 16, 2)
    np.testing.assert_allclose((a + b).to_dense(), a.to_dense() + b.to_dense())
    np.testing.assert_allclose((a - 2.0 * b).to_dense(), a.to_dense() - 2 * b.to_dense())


def test_operator_rejects_wide_band():
    with pytest.raises(ValueError):
        PeriodicOperator(np.zeros((8, 9)))


def test_identity_solve(grid, rng):
    rhs = GridFunction(grid, rng.standard_normal(grid.M))
    out = solve_banded_periodic(PeriodicOperator.identity(grid.M), rhs)
    np.testing.assert_array_equal(out.values, rhs.values)


@pytest.mark.parametrize("dt", [1e-4, 1e-2, 1.0])
def test_heat_symbol_solve(grid, dt):
    D2 = PeriodicOperator.from_stencil(grid.M, {-1: 1.0, 0: -2.0, 1: 1.0}, 1 / grid.dx**2)
    op = PeriodicOperator.identity(grid.M, 1) - D2 * dt
    psi1 = NoiseModel.from_spectrum(TWO_PI, K=1).psi(grid.x)[2]
    out = solve_banded_periodic(op, GridFunction(grid, psi1))
    # exact symbol of the circulant 3-point Laplacian
    sym = 1 + dt * 4 * np.sin(grid.dx / 2) ** 2 / grid.dx**2
    np.testing.assert_allclose(out.values, psi1 / sym, atol=1e-14)
    # the continuum symbol differs by dt k^2 dx^2 / 12
    cont_err = np.max(np.abs(out.values - psi1 / (1 + dt)))
    assert cont_err <= dt * grid.dx**2 / 12 * np.max(np.abs(psi1)) * 1.01
    if dt <= 1e-4:
        assert cont_err <= 1e-8


@pytest.mark.parametrize("p", [1, 2, 3])
@pytest.mark.parametrize("M", [9, 16, 257])
def test_solve_round_trip(rng, p, M):
    op = _random_op(rng, M, p, dominance=1.1)
    rhs = rng.standard_normal(M)
    y = solve_banded_periodic(op, rhs)
    assert np.max(np.abs(op.apply(y) - rhs)) <= 1e-10 * np.max(np.abs(rhs))
    np.testing.assert_allclose(y, np.linalg.solve(op.to_dense(), rhs), rtol=1e-10, atol=1e-12)


def test_solve_is_bit_stable(rng):
    op = _random_op(rng, 64, 2)
    rhs = rng.standard_normal(64)
    assert np.array_equal(solve_banded_periodic(op, rhs), solve_banded_periodic(op, rhs))


def test_singular_system_reports_residual():
    # the periodic Laplacian annihilates constants: singular
    op = PeriodicOperator.from_stencil(16, {-1: 1.0, 0: -2.0, 1: 1.0})
    with pytest.raises(SolverFailure) as info:
        solve_banded_periodic(op, np.ones(16))
    assert info.value.residual > 1e-10 or np.isinf(info.value.residual) or np.isnan(info.value.residual)


def test_banded_lu_reuse(rng):
    op = _random_op(rng, 32, 2)
    lu = PeriodicBandedLU(op)
    for _ in range(3):
        b = rng.standard_normal(32)
        np.testing.assert_allclose(op.apply(lu.solve(b)), b, atol=1e-12)


@given(arrays(float, 32, elements=finite))
def test_flux_form_operator_conserves(values):
    rng = np.random.default_rng(0)
    m = rng.uniform(0.1, 2.0, 32)
    # D_-(m D_+ .) assembled by diagonals
    bands = np.stack([np.roll(m, 1), -(m + np.roll(m, 1)), m], axis=1)
    op = PeriodicOperator(bands)
    scale = max(1.0, np.max(np.abs(values))) * op.max_abs()
    assert abs(np.sum(op.apply(values))) <= 1e-12 * scale * 32
    assert np.max(np.abs(op.column_sums())) <= 1e-12 * op.max_abs()
