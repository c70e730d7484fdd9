import numpy as np
import pytest

from einc import (
    BravaisLattice,
    MatrixField,
    PeriodicGrid,
    ScalarField,
    hessian,
    laplacian_apply,
    reciprocal_basis,
    wrap_fractional,
)


def test_basis_validation():
    with pytest.raises(ValueError):
        BravaisLattice(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        BravaisLattice(np.eye(4))
    lat = BravaisLattice(np.array([[2.0, 0.0], [0.0, 3.0]]))
    assert lat.dim == 2
    assert lat.is_orthogonal


def test_fractional_round_trip():
    lat = BravaisLattice(np.array([[1.0, 0.5], [0.0, 1.0]]))
    pts = np.array([[0.3, 0.7], [1.9, -0.2]])
    x = lat.cartesian(pts)
    back = lat.fractional(x)
    assert np.allclose(back, pts, atol=1e-13)


def test_wrap_fractional():
    lat = BravaisLattice(np.eye(2))
    w = wrap_fractional(lat, np.array([[1.25, -0.25], [0.5, 3.0]]))
    assert np.allclose(w, [[0.25, 0.75], [0.5, 0.0]])


def test_reciprocal_duality():
    lat = BravaisLattice(np.array([[2.0, 1.0], [0.0, 1.5]]))
    G = reciprocal_basis(lat)
    # e_i . g_j = 2 pi delta_ij
    assert np.allclose(lat.basis @ G.T, 2.0 * np.pi * np.eye(2), atol=1e-12)


def test_grid_geometry():
    lat = BravaisLattice(np.diag([2.0, 4.0]))
    grid = PeriodicGrid(lat, (8, 16))
    assert grid.shape == (8, 16)
    assert np.allclose(grid.axis_spacings(), [0.25, 0.25])
    assert grid.node_volume * 8 * 16 == pytest.approx(8.0)
    with pytest.raises(ValueError):
        PeriodicGrid(lat, (2, 16))


def test_scalar_field_checks():
    lat = BravaisLattice(np.eye(2))
    grid = PeriodicGrid(lat, (8, 8))
    with pytest.raises(ValueError):
        ScalarField(grid, np.zeros((8, 4)))
    with pytest.raises(ValueError):
        ScalarField(grid, np.full((8, 8), np.nan))


def test_matrix_field_symmetry_check():
    lat = BravaisLattice(np.eye(2))
    grid = PeriodicGrid(lat, (8, 8))
    vals = np.zeros((8, 8, 2, 2))
    vals[..., 0, 1] = 1.0
    with pytest.raises(ValueError):
        MatrixField(grid, vals)


def test_laplacian_of_smooth_field():
    lat = BravaisLattice(np.eye(2))
    grid = PeriodicGrid(lat, (128, 128))
    x = grid.cartesian_nodes()
    u = ScalarField(grid, np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1]))
    lap = laplacian_apply(u)
    exact = -2.0 * (2 * np.pi) ** 2 * u.values
    assert np.max(np.abs(lap.values - exact)) < 0.005 * np.max(np.abs(exact))


def test_hessian_of_smooth_field():
    lat = BravaisLattice(np.eye(2))
    grid = PeriodicGrid(lat, (128, 128))
    x = grid.cartesian_nodes()
    s = np.sin(2 * np.pi * x[..., 0]) * np.sin(2 * np.pi * x[..., 1])
    u = ScalarField(grid, s)
    H = hessian(u).values
    w = (2 * np.pi) ** 2
    assert np.max(np.abs(H[..., 0, 0] + w * s)) < 0.01 * w
    exact01 = w * np.cos(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])
    assert np.max(np.abs(H[..., 0, 1] - exact01)) < 0.01 * w


def test_hessian_trace_matches_laplacian():
    rng = np.random.default_rng(0)
    lat = BravaisLattice(np.eye(2))
    grid = PeriodicGrid(lat, (16, 16))
    u = ScalarField(grid, rng.normal(size=(16, 16)))
    H = hessian(u).values
    lap = laplacian_apply(u).values
    assert np.allclose(np.trace(H, axis1=-2, axis2=-1), lap, atol=1e-10)


def test_laplacian_rejects_oblique_lattice():
    lat = BravaisLattice(np.array([[1.0, 0.5], [0.0, 1.0]]))
    grid = PeriodicGrid(lat, (8, 8))
    u = ScalarField(grid, np.zeros((8, 8)))
    with pytest.raises(ValueError):
        laplacian_apply(u)
