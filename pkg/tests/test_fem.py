import numpy as np
import pytest

from billiardtherm import fem, geometry
from billiardtherm.eigensolve import lowest_eigenpairs
from billiardtherm.errors import AssemblyError
from billiardtherm.geometry import Mesh, Rectangle


def _ground_energy(n, order):
    mesh = geometry.build_mesh(Rectangle(1.0, 1.0), n)
    system = fem.assemble(mesh, order=order)
    result = lowest_eigenpairs(system, 4, tol=1e-8)
    return result.energies


def _single_triangle_mesh():
    verts = np.array([[0.0, 0.0], [1.3, 0.1], [0.4, 0.9]])
    tris = np.array([[0, 1, 2]])
    return Mesh(verts, tris, np.array([True, True, True]))


@pytest.mark.parametrize("order", [1, 2])
def test_element_stiffness_kernel_and_psd(order):
    ke, _ = fem.element_matrices(_single_triangle_mesh(), order=order)
    k = ke[0]
    # constants are in the kernel: zero row sums
    assert np.abs(k.sum(axis=1)).max() < 1e-12
    w = np.linalg.eigvalsh(k)
    assert w.min() > -1e-12
    assert (w > 1e-10).sum() == k.shape[0] - 1


@pytest.mark.parametrize("order", [1, 2])
def test_mass_positive_definite(order):
    mesh = geometry.build_mesh(Rectangle(1.0, 0.8), 6)
    system = fem.assemble(mesh, order=order)
    np.linalg.cholesky(system.mass.full().toarray())  # raises if not PD


def test_unit_square_ground_state():
    mesh = geometry.build_mesh(Rectangle(1.0, 1.0), 32)
    system = fem.assemble(mesh, order=2)
    result = lowest_eigenpairs(system, 3, tol=1e-8)
    exact = np.pi**2  # (pi^2/2)(1 + 1)
    assert abs(result.energies[0] - exact) / exact < 5e-4


def test_unit_square_degenerate_pair():
    mesh = geometry.build_mesh(Rectangle(1.0, 1.0), 32)
    system = fem.assemble(mesh, order=2)
    result = lowest_eigenpairs(system, 3, tol=1e-8)
    exact = 2.5 * np.pi**2  # modes (1,2) and (2,1)
    assert result.energies[1] == pytest.approx(exact, rel=2e-4)
    assert result.energies[2] == pytest.approx(exact, rel=2e-4)
    # the pair splits only at the discretization-error scale, far below
    # the physical gaps around it
    assert result.energies[2] - result.energies[1] < 1e-5 * exact
    gap_above = result.energies[2] - result.energies[1]
    assert gap_above < 1e-3 * (result.energies[1] - result.energies[0])


@pytest.mark.parametrize("order,min_ratio", [(1, 3.0), (2, 10.0)])
def test_convergence_rate(order, min_ratio):
    exact = np.pi**2
    errs = [abs(_ground_energy(n, order)[0] - exact) for n in (8, 16, 32)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[1] > min_ratio
    assert errs[1] / errs[2] > min_ratio


def test_eigenvector_mass_norm():
    mesh = geometry.build_mesh(Rectangle(1.0, 0.9), 10)
    system = fem.assemble(mesh, order=2)
    result = lowest_eigenpairs(system, 6, tol=1e-8)
    m = system.mass.full()
    for i in range(6):
        x = result.vectors[:, i]
        assert x @ (m @ x) == pytest.approx(1.0, abs=1e-7)


def test_degenerate_triangle_raises():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    tris = np.array([[0, 1, 2]])
    mesh = Mesh(verts, tris, np.array([True, True, True]))
    with pytest.raises(AssemblyError) as err:
        fem.assemble(mesh, order=1)
    assert err.value.triangle == 0


def test_assembled_coo_has_no_duplicates():
    mesh = geometry.build_mesh(Rectangle(1.0, 1.0), 5)
    system = fem.assemble(mesh, order=2)
    rows, cols, _ = system.stiffness.coo_entries()
    pairs = np.column_stack([rows, cols])
    assert len(np.unique(pairs, axis=0)) == len(pairs)
    assert (rows <= cols).all()


def test_matrix_export_format(tmp_path):
    mesh = geometry.build_mesh(Rectangle(1.0, 1.0), 4)
    system = fem.assemble(mesh, order=1)
    path = tmp_path / "k.txt"
    fem.write_matrix(path, system.stiffness)
    rows = [line.split() for line in path.read_text().splitlines()]
    assert all(len(r) == 3 for r in rows)
    r, c, v = rows[0]
    assert int(r) <= int(c)
    assert float(v) != 0.0
    # full storage reconstructs a symmetric operator
    full = system.stiffness.full().toarray()
    assert np.abs(full - full.T).max() == 0.0
