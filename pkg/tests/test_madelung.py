import numpy as np
import pytest

from fslab.errors import AccuracyError, OffMeshError
from fslab.lattice_mesh import UnitCell, build_mesh, reciprocal_of
from fslab.madelung import (
    EwaldSpec,
    default_sigma,
    h_sigma,
    integral_h_sigma,
    madelung_constant,
    madelung_from_subtraction,
)

CELL = UnitCell.cubic(6.0)
SC_MADELUNG = -2.8372974794  # simple-cubic Madelung constant in units of 1/a


def spec(n, sigma=None, cell=CELL):
    return EwaldSpec(cell, build_mesh(reciprocal_of(cell), (n, n, n)), sigma)


def test_gamma_only_value():
    np.testing.assert_allclose(madelung_constant(spec(1)).xi, -0.47288291324677, rtol=0, atol=1e-12)
    np.testing.assert_allclose(madelung_constant(spec(1)).xi, SC_MADELUNG / 6.0, rtol=0, atol=1e-9)


@pytest.mark.parametrize("n", [1, 3])
def test_sigma_invariance(n):
    xs = np.array([madelung_constant(spec(n, s)).xi for s in (0.5, 1.0, 2.0, 4.0)])
    assert np.ptp(xs) / abs(xs.mean()) < 1e-8


def test_cubic_scaling():
    scaled = [madelung_constant(spec(n)).xi * n for n in (1, 2, 3, 4)]
    np.testing.assert_allclose(scaled, scaled[0], rtol=1e-6)


def test_noncubic_supercell_matches_supercell_gamma():
    cell = UnitCell(np.diag([6.0, 6.0, 12.0]))
    a = madelung_constant(EwaldSpec(cell, build_mesh(reciprocal_of(cell), (2, 2, 1)))).xi
    np.testing.assert_allclose(a, SC_MADELUNG / 12.0, atol=1e-9)


def test_h_sigma_is_periodic():
    s = spec(1)
    b = reciprocal_of(CELL).vectors
    q = np.array([0.1, -0.2, 0.05])
    np.testing.assert_allclose(h_sigma(q, s), h_sigma(q + b[1], s), rtol=1e-12)


def test_integral_of_h_sigma_first_order_quadrature():
    # dropping the q=0 point of a 1/q^2 kernel costs O(1/m): the error halves as the mesh doubles
    s = spec(1, sigma=8.0)
    zone = reciprocal_of(CELL).bz_volume
    errors = []
    for m in (6, 12, 24):
        mesh = build_mesh(reciprocal_of(CELL), (m, m, m))
        mean = np.mean([h_sigma(q, s) for q in mesh.points])
        errors.append(abs(zone * mean - integral_h_sigma(s)))
    slope = np.polyfit(np.log([6, 12, 24]), np.log(errors), 1)[0]
    assert abs(slope + 1) < 0.1


def test_subtraction_estimate_converges_to_xi():
    gaps = [abs(madelung_from_subtraction(spec(n)) - madelung_constant(spec(n)).xi) for n in (1, 2, 4)]
    assert gaps[2] < gaps[0]


def test_default_sigma_positive():
    assert default_sigma(CELL) > 0


def test_cutoff_too_small():
    mesh = build_mesh(reciprocal_of(CELL), (1, 1, 1))
    with pytest.raises(AccuracyError):
        EwaldSpec(CELL, mesh, 1.0, recip_cutoff=0.5)
    with pytest.raises(AccuracyError):
        EwaldSpec(CELL, mesh, 1.0, real_cutoff=1.0)


def test_shifted_mesh_rejected():
    mesh = build_mesh(reciprocal_of(CELL), (2, 2, 2), gamma_centered=False)
    with pytest.raises(OffMeshError):
        EwaldSpec(CELL, mesh)
