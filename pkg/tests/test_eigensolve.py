import numpy as np
import pytest

from billiardtherm import fem, geometry
from billiardtherm.eigensolve import (lowest_eigenpairs, unfolded_spacings,
                                      weyl_count)
from billiardtherm.errors import ValidationError
from billiardtherm.geometry import Rectangle, SinaiElementary


def rectangle_levels(lx, ly, count):
    """Analytic oracle: sorted box energies (pi^2/2)(m^2/lx^2 + n^2/ly^2)."""
    m, n = np.meshgrid(np.arange(1, 80), np.arange(1, 80), indexing="ij")
    e = np.pi**2 / 2 * (m**2 / lx**2 + n**2 / ly**2)
    return np.sort(e.ravel())[:count]


@pytest.fixture(scope="module")
def square_system():
    mesh = geometry.build_mesh(Rectangle(1.0, 1.0), 64)
    return fem.assemble(mesh, order=2)


def test_analytic_oracle_ten_levels(square_system):
    result = lowest_eigenpairs(square_system, 10, tol=1e-8, keep_vectors=False)
    exact = rectangle_levels(1.0, 1.0, 10)
    assert np.max(np.abs(result.energies - exact) / exact) < 1e-3


def test_residual_and_orthonormality_contract(square_system):
    result = lowest_eigenpairs(square_system, 12, tol=1e-8)
    assert (result.residuals <= 1e-8).all()
    assert result.metadata["ortho_dev"] <= 1e-7
    m = square_system.mass.full()
    gram = result.vectors.T @ (m @ result.vectors)
    assert np.abs(gram - np.eye(12)).max() < 1e-7


def test_ground_state_sign_definite():
    mesh = geometry.build_mesh(SinaiElementary(1.09, 1.0, 0.5), 20)
    system = fem.assemble(mesh, order=2)
    result = lowest_eigenpairs(system, 1, tol=1e-8)
    x = result.vectors[:, 0]
    x = x * np.sign(x[np.argmax(np.abs(x))])
    assert x.min() > -1e-8 * np.abs(x).max()


def test_increasing_k_is_stable(square_system):
    a = lowest_eigenpairs(square_system, 15, tol=1e-8, keep_vectors=False)
    b = lowest_eigenpairs(square_system, 25, tol=1e-8, keep_vectors=False)
    assert np.allclose(a.energies, b.energies[:15], rtol=1e-8)


def test_windowed_sweep_matches_analytic():
    # small window forces several seams on a non-degenerate rectangle
    mesh = geometry.build_mesh(Rectangle(1.09, 1.0), 40)
    system = fem.assemble(mesh, order=2)
    result = lowest_eigenpairs(system, 80, tol=1e-8, keep_vectors=False, window=30)
    exact = rectangle_levels(1.09, 1.0, 80)
    rel = np.abs(result.energies - exact) / exact
    # a missed or duplicated level would shift the comparison and blow this up
    assert np.median(rel) < 5e-4
    assert rel.max() < 5e-3
    assert result.metadata["windows"] > 2


def test_determinism(square_system):
    a = lowest_eigenpairs(square_system, 8, tol=1e-8, keep_vectors=False)
    b = lowest_eigenpairs(square_system, 8, tol=1e-8, keep_vectors=False)
    assert np.array_equal(a.energies, b.energies)


def test_invalid_arguments(square_system):
    with pytest.raises(ValidationError):
        lowest_eigenpairs(square_system, 0)
    with pytest.raises(ValidationError):
        lowest_eigenpairs(square_system, square_system.dim)
    with pytest.raises(ValidationError):
        lowest_eigenpairs(square_system, 5, tol=1e-3)


def test_weyl_count_on_analytic_spectrum():
    e = rectangle_levels(1.0, 1.0, 400)
    n_weyl = weyl_count(e[-1], 1.0, 4.0)
    assert abs(n_weyl - 400) / 400 < 0.03
    s = unfolded_spacings(e, 1.0, 4.0)
    assert s.mean() == pytest.approx(1.0, rel=0.05)
