import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fslab.errors import (
    ConfigError,
    DegeneracyError,
    GaugeObstructionError,
    InvalidTupleError,
    MeshCompatibilityError,
    MeshMismatchError,
    NotAnInsulatorError,
)
from fslab.lattice_mesh import UnitCell, build_mesh, enumerate_shells, reciprocal_of
from fslab.model_system import (
    BandModel,
    Envelope1D,
    EriEvaluator,
    LocalizedBasis,
    default_eri_cutoff,
    gauge_fix,
    kinetic_energies,
    orbital_energies,
    pair_density,
    preset_model,
    solve_bands,
    tdl_reference_energy,
)

CELL = UnitCell.cubic(6.0)


def mesh_of(n, cell=CELL):
    return build_mesh(reciprocal_of(cell), (n, n, n))


def two_band_model(t=0.3, s=0.1, gap_floor=0.1):
    basis = LocalizedBasis(CELL, (6.0, 6.0, 6.0), 6, ((0, 0, 0), (1, 0, 0)))
    hr = np.array([[0.0, t], [s, 0.0]])
    table = {(0, 0, 0): np.diag([-1.0, 1.0]), (1, 0, 0): hr, (-1, 0, 0): hr.T}
    return BandModel(basis, table, 1, 1, gap_floor=gap_floor)


def test_envelope_orthonormal():
    env = Envelope1D(5.4, 6, 4)
    x, w = np.polynomial.legendre.leggauss(400)
    x, w = 2.7 * x, 2.7 * w
    vals = env.values(x)
    np.testing.assert_allclose((vals * w) @ vals.T, np.eye(4), atol=1e-13)
    assert np.all(env.values(np.array([2.71, -3.0])) == 0)


def test_envelope_kinetic_and_fourier_by_quadrature():
    env = Envelope1D(6.0, 6, 3)
    x = np.linspace(-3.0, 3.0, 20001)
    vals = env.values(x)
    d = np.gradient(vals, x, axis=1)
    np.testing.assert_allclose(np.trapezoid(d[:, None] * d[None, :], x), env.kinetic(), atol=1e-6)
    p = np.array([0.0, 0.7, 2.1])
    direct = np.trapezoid(vals[:, None, :] * np.exp(-1j * np.outer(p, x)), x)
    np.testing.assert_allclose(env.fourier(p), direct, atol=1e-10)


def test_basis_orthonormal_in_three_dimensions():
    basis = preset_model("insulator-2x2").basis
    nodes = [np.polynomial.legendre.leggauss(48) for _ in range(3)]
    r = [0.5 * l * t for l, (t, _) in zip(basis.lengths, nodes)]
    w = [0.5 * l * ww for l, (_, ww) in zip(basis.lengths, nodes)]
    grid = np.stack(np.meshgrid(*r, indexing="ij"), axis=-1).reshape(-1, 3)
    weight = np.einsum("i,j,k->ijk", *w).reshape(-1)
    vals = basis.values(grid)
    np.testing.assert_allclose((vals * weight) @ vals.T, np.eye(basis.size), atol=1e-12)


def test_bad_basis_rejected():
    with pytest.raises(ConfigError):
        LocalizedBasis(CELL, (7.0, 6.0, 6.0), 6, ((0, 0, 0),))
    with pytest.raises(ConfigError):
        LocalizedBasis(CELL, (6.0, 6.0, 6.0), 6, ((0, 0, 0), (0, 0, 0)))
    with pytest.raises(ConfigError):
        LocalizedBasis(UnitCell(np.array([[6.0, 0, 0], [1.0, 6.0, 0], [0, 0, 6.0]])), (5, 5, 5), 6, ((0, 0, 0),))


def test_nonhermitian_table_rejected():
    basis = LocalizedBasis(CELL, (6.0, 6.0, 6.0), 6, ((0, 0, 0), (1, 0, 0)))
    with pytest.raises(ConfigError):
        BandModel(basis, {(0, 0, 0): np.diag([-1.0, 1.0]), (1, 0, 0): np.ones((2, 2))}, 1, 1)
    with pytest.raises(ConfigError):
        BandModel(basis, {(0, 0, 0): np.diag([-1.0, 1.0])}, 2, 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_h_hermitian(k):
    h = preset_model("insulator-2x2-dispersive").h(np.array(k))
    np.testing.assert_allclose(h, h.conj().T, atol=1e-15)


def test_two_band_closed_form():
    model = two_band_model()
    mesh = mesh_of(4)
    table = solve_bands(model, mesh)
    kx = mesh.points[:, 0] * 6.0
    off = np.abs(0.3 * np.exp(1j * kx) + 0.1 * np.exp(-1j * kx))
    np.testing.assert_allclose(table.band_energies[:, 0], -np.sqrt(1 + off**2), atol=1e-14)
    np.testing.assert_allclose(table.band_energies[:, 1], np.sqrt(1 + off**2), atol=1e-14)


def test_gap_and_degeneracy_errors():
    with pytest.raises(NotAnInsulatorError):
        solve_bands(two_band_model(gap_floor=5.0), mesh_of(2))
    basis = LocalizedBasis(CELL, (6.0, 6.0, 6.0), 6, ((0, 0, 0), (1, 0, 0), (0, 1, 0)))
    flat = BandModel(basis, {(0, 0, 0): np.diag([-1.0, 1.0, 1.0])}, 1, 2)
    with pytest.raises(DegeneracyError):
        solve_bands(flat, mesh_of(1))


@pytest.mark.parametrize("name", ["insulator-2x2", "insulator-2x2-dispersive", "insulator-1x2"])
def test_gap_floor_on_meshes(name):
    model = preset_model(name)
    for n in (1, 2, 3, 4):
        e = solve_bands(model, mesh_of(n)).band_energies
        assert e[:, model.n_occ].min() - e[:, model.n_occ - 1].max() >= model.gap_floor


def test_gauge_phase_invariance():
    model = preset_model("insulator-2x2-dispersive")
    table = solve_bands(model, mesh_of(3))
    rng = np.random.default_rng(1)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(27, 1, 4)))
    again = gauge_fix(table.coeffs * phases, model.gauge_reference)
    np.testing.assert_allclose(again, table.coeffs, atol=1e-14)
    comp = np.take_along_axis(table.coeffs, model.gauge_reference[None, None, :], axis=1)
    np.testing.assert_allclose(comp.imag, 0, atol=1e-15)
    assert np.all(comp.real > 0)


def test_gauge_is_smooth():
    model = preset_model("insulator-2x2-dispersive")
    mesh = mesh_of(6)
    u = solve_bands(model, mesh).coeffs
    step = mesh.add_table[:, mesh.index_of(mesh.recip.vectors[0] / 6)]
    assert np.abs(u[step] - u).max() < 0.1


def test_gauge_obstruction():
    raw = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    with pytest.raises(GaugeObstructionError):
        gauge_fix(raw, np.array([0, 0]))


def test_flat_orbitals_k_independent():
    assert solve_bands(preset_model("insulator-2x2"), mesh_of(3)).k_independent
    assert not solve_bands(preset_model("insulator-2x2-dispersive"), mesh_of(3)).k_independent


def test_pair_density_against_real_space_quadrature():
    model = preset_model("insulator-2x2-dispersive")
    mesh = mesh_of(2)
    table = solve_bands(model, mesh)
    basis = model.basis
    nodes = [np.polynomial.legendre.leggauss(40) for _ in range(3)]
    r = [0.5 * l * t for l, (t, _) in zip(basis.lengths, nodes)]
    w = [0.5 * l * ww for l, (_, ww) in zip(basis.lengths, nodes)]
    grid = np.stack(np.meshgrid(*r, indexing="ij"), axis=-1).reshape(-1, 3)
    weight = np.einsum("i,j,k->ijk", *w).reshape(-1)
    vals = basis.values(grid)
    pts = mesh.points
    g = reciprocal_of(CELL).vectors
    for n_p, kp, n, k, gv in [(0, 0, 0, 0, np.zeros(3)), (1, 3, 2, 5, g[0]), (3, 7, 0, 1, g[1] - g[2])]:
        psi_p = table.coeffs[kp][:, n_p] @ vals
        psi = table.coeffs[k][:, n] @ vals
        phase = np.exp(1j * grid @ (pts[kp] - pts[k] - gv))
        direct = np.sum(weight * psi_p.conj() * phase * psi)
        np.testing.assert_allclose(pair_density(table, n_p, kp, n, k, gv), direct, atol=1e-10)


def test_pair_density_normalization():
    table = solve_bands(preset_model("insulator-2x2-dispersive"), mesh_of(2))
    for k in range(8):
        for n in range(4):
            np.testing.assert_allclose(pair_density(table, n, k, n, k, np.zeros(3)), 1.0, atol=1e-13)
        np.testing.assert_allclose(pair_density(table, 0, k, 1, k, np.zeros(3)), 0.0, atol=1e-13)


def test_pw_coefficients_complete():
    table = solve_bands(preset_model("insulator-2x2-dispersive"), mesh_of(1))
    c = table.pw_coefficients(enumerate_shells(reciprocal_of(CELL), 9.0))
    np.testing.assert_allclose(np.einsum("kng,kmg->knm", c.conj(), c)[0], np.eye(4), atol=1e-6)


def eri_oracle(ev, n1, k1, n2, k2, n3, k3, n4, k4, cutoff=18.0):
    """Direct G sum of pair-density products with a larger cutoff than the evaluator."""
    t = ev.orbitals
    pts = ev.mesh.points
    q = pts[k3] - pts[k1]
    shells = enumerate_shells(ev.recip, cutoff, center=q)
    p = q + shells.vectors
    p2 = np.einsum("ij,ij->i", p, p)
    keep = p2 > 1e-20
    p, p2 = p[keep], p2[keep]
    f = t.basis.form_factor(p)
    rho13 = np.einsum("m,mnx,n->x", t.coeffs[k1][:, n1].conj(), f, t.coeffs[k3][:, n3])
    rho42 = np.einsum("m,mnx,n->x", t.coeffs[k4][:, n4].conj(), f, t.coeffs[k2][:, n2])
    return 4 * np.pi / ev.cell.volume * np.sum(rho13 * rho42.conj() / p2)


def random_tuples(mesh, nb, count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        k1, k2, k3 = rng.integers(mesh.nk, size=3)
        n = rng.integers(nb, size=4)
        yield n[0], k1, n[1], k2, n[2], k3, n[3], mesh.kconserv[k1, k2, k3]


def test_eri_against_direct_sum(make_system):
    ev = make_system("insulator-2x2-dispersive", 2)[0]
    for n1, k1, n2, k2, n3, k3, n4, k4 in random_tuples(ev.mesh, 4, 6, 3):
        np.testing.assert_allclose(ev.eri(n1, k1, n2, k2, n3, k3, n4, k4),
                                   eri_oracle(ev, n1, k1, n2, k2, n3, k3, n4, k4), atol=1e-12)


def test_eri_hermiticity_and_pair_swap(make_system):
    ev = make_system("insulator-2x2-dispersive", 2)[0]
    for n1, k1, n2, k2, n3, k3, n4, k4 in random_tuples(ev.mesh, 4, 100, 0):
        v = ev.eri(n1, k1, n2, k2, n3, k3, n4, k4)
        np.testing.assert_allclose(v, np.conj(ev.eri(n3, k3, n4, k4, n1, k1, n2, k2)), atol=1e-12)
        np.testing.assert_allclose(v, ev.eri(n2, k2, n1, k1, n4, k4, n3, k3), atol=1e-12)


def test_eri_cutoff_converged():
    model = preset_model("insulator-1x1")
    table = solve_bands(model, mesh_of(2))
    cut = default_eri_cutoff(model.basis)
    a = EriEvaluator(table).kernel
    b = EriEvaluator(table, g_cutoff=1.3 * cut).kernel
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_eri_scale_is_linear(make_system):
    ev = make_system("insulator-1x1", 2)[0]
    weak = EriEvaluator(ev.orbitals, eri_scale=0.1)
    np.testing.assert_allclose(weak.kernel, 0.1 * ev.kernel, rtol=1e-14)
    with pytest.raises(ConfigError):
        EriEvaluator(ev.orbitals, eri_scale=0.0)


def test_eri_rejects_nonconserving_tuple(make_system):
    ev = make_system("insulator-2x2", 2)[0]
    with pytest.raises(InvalidTupleError):
        ev.eri(0, 1, 0, 0, 0, 0, 0, 0)


def test_flat_and_general_blocks_agree(make_system):
    ev = make_system("insulator-2x2", 2)[0]
    general = EriEvaluator(ev.orbitals)
    general.__dict__["k_independent"] = False
    k1, k2, k3 = np.indices((8, 8, 8))
    np.testing.assert_allclose(general.block("aaaa", k1, k2, k3), ev.block("aaaa", k1, k2, k3), atol=1e-14)


@pytest.mark.parametrize("name", ["insulator-2x2", "insulator-2x2-dispersive"])
def test_orbital_energies_against_loop(make_system, name):
    ev, xi, plain, corrected = make_system(name, 2)
    nk, no = ev.nk, ev.n_occ
    kin = kinetic_energies(ev.orbitals)
    for k in range(nk):
        for n in range(4):
            field = 0.0
            for kp in range(nk):
                for i in range(no):
                    field += 2 * ev.eri(i, kp, n, k, i, kp, n, k) - ev.eri(i, kp, n, k, n, k, i, kp)
            np.testing.assert_allclose(plain.eps[k, n], kin[k, n] + field.real / nk, atol=1e-12)


def test_correction_shifts_occupied_only(make_system):
    ev, xi, plain, corrected = make_system("insulator-2x2-dispersive", 2)
    np.testing.assert_allclose(corrected.occ - plain.occ, xi, atol=1e-15)
    np.testing.assert_array_equal(corrected.vir, plain.vir)
    assert corrected.corrected and corrected.xi_used == xi
    with pytest.raises(ConfigError):
        corrected.with_correction(xi)
    same = orbital_energies(ev, corrected=True, xi=xi)
    np.testing.assert_allclose(same.eps, corrected.eps, atol=1e-15)


def test_orbital_energies_mesh_mismatch(make_system):
    ev = make_system("insulator-2x2", 2)[0]
    with pytest.raises(MeshMismatchError):
        orbital_energies(ev, mesh=mesh_of(3))


def test_gap_grows_without_correction(make_system):
    gaps = []
    for n in (1, 2, 3):
        plain = make_system("insulator-2x2", n)[2]
        gaps.append(plain.vir.min() - plain.occ.max())
    assert gaps[0] < gaps[1] < gaps[2]


def test_tdl_reference_matches_corrected_energies(make_system):
    model = preset_model("insulator-2x2-dispersive")
    ev, xi, plain, corrected = make_system("insulator-2x2-dispersive", 2)
    k = ev.mesh.points[3]
    np.testing.assert_allclose(tdl_reference_energy(model, 1, k, (2, 2, 2)), corrected.eps[3, 1], atol=1e-13)
    with pytest.raises(MeshCompatibilityError):
        tdl_reference_energy(model, 0, reciprocal_of(CELL).vectors[0] / 3, (2, 2, 2))


def test_presets():
    for name in ("insulator-1x1", "insulator-1x2", "insulator-2x1", "insulator-2x2"):
        model = preset_model(name)
        assert model.is_flat and model.name == name
    model = preset_model("insulator-2x2-dispersive")
    assert not model.is_flat and model.n_bands == 4
    for bad in ("insulator-3x2", "metal-1x1", "insulator-2x2-flat", "insulator"):
        with pytest.raises(ConfigError):
            preset_model(bad)
