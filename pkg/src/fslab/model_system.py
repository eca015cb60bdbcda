"""Synthetic periodic insulator built from compactly supported localized orbitals.

Each basis orbital ``w_mu(r) = chi_{m1}(x) chi_{m2}(y) chi_{m3}(z)`` is a product of
1D functions ``poly(x) cos^p(pi x / L)`` supported on ``[-L/2, L/2]``, orthonormalized
per axis.  Supports fit inside the home cell, so lattice translates never overlap
and the Bloch sums ``sum_R e^{ik.R} w_mu(r - R)`` are orthonormal at every ``k``.
Bands are ``psi_nk = sum_mu U_{mu n}(k) (Bloch sum of w_mu)`` where ``U(k)`` diagonalizes
the tight-binding matrix ``h(k) = sum_R H_R e^{ik.R}``.

Because the supports do not overlap, pair densities are exact form factors

    rho_{n'k', nk}(G) = sum_{mu nu} conj(U_{mu n'}(k')) U_{nu n}(k) F_{mu nu}(k - k' + G),
    F_{mu nu}(p) = int w_mu(r) w_nu(r) exp(-i p.r) dr,

and the ERI kernel in the localized basis depends on the momentum transfer only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    ConfigError,
    DegeneracyError,
    GaugeObstructionError,
    InvalidTupleError,
    MeshCompatibilityError,
    MeshMismatchError,
    NotAnInsulatorError,
    OffMeshError,
)
from .lattice_mesh import KMesh, UnitCell, build_mesh, enumerate_shells, reciprocal_of

GL_NODES = 256
ERI_TAIL = 1e-15
DEGENERACY_TOL = 1e-10
GAUGE_THRESHOLD = 1e-3


# -- 1D orbital families ----------------------------------------------------


class Envelope1D:
    """Orthonormal family ``chi_m = (sum_j C_mj x^j) cos^p(pi x/L)`` on ``[-L/2, L/2]``."""

    def __init__(self, length: float, power: int, nmax: int, n_nodes: int = GL_NODES):
        self.length = float(length)
        self.power = int(power)
        self.nmax = int(nmax)
        t, w = np.polynomial.legendre.leggauss(n_nodes)
        self.nodes = 0.5 * self.length * t
        self.weights = 0.5 * self.length * w
        raw = self._monomials(self.nodes)
        gram = (raw * self.weights) @ raw.T
        self.coeffs = np.linalg.inv(np.linalg.cholesky(gram))
        self._on_nodes = self.coeffs @ raw
        self._d_on_nodes = self.coeffs @ self._d_monomials(self.nodes)

    def _envelope(self, x):
        return np.cos(np.pi * x / self.length) ** self.power

    def _monomials(self, x):
        env = self._envelope(x)
        return np.stack([x**j * env for j in range(self.nmax)])

    def _d_monomials(self, x):
        c = np.cos(np.pi * x / self.length)
        s = np.sin(np.pi * x / self.length)
        env = c**self.power
        d_env = -self.power * c ** (self.power - 1) * s * np.pi / self.length
        rows = []
        for j in range(self.nmax):
            d_poly = j * x ** (j - 1) if j > 0 else np.zeros_like(x)
            rows.append(d_poly * env + x**j * d_env)
        return np.stack(rows)

    def values(self, x) -> np.ndarray:
        """``chi_m(x)``, shape ``(nmax, len(x))``; zero outside the support."""
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= 0.5 * self.length
        out = self.coeffs @ self._monomials(np.where(inside, x, 0.0))
        return out * inside

    def kinetic(self) -> np.ndarray:
        """``int chi_m' chi_n'``."""
        return (self._d_on_nodes * self.weights) @ self._d_on_nodes.T

    def fourier(self, p) -> np.ndarray:
        """``int chi_m(x) exp(-i p x) dx``, shape ``(nmax, len(p))``."""
        phase = np.exp(-1j * np.outer(self.nodes, np.asarray(p, dtype=float)))
        return (self._on_nodes * self.weights) @ phase

    def pair_fourier(self, p) -> np.ndarray:
        """``int chi_m chi_n exp(-i p x) dx``, shape ``(nmax, nmax, len(p))``."""
        phase = np.exp(-1j * np.outer(self.nodes, np.asarray(p, dtype=float)))
        prod = self._on_nodes[:, None, :] * self._on_nodes[None, :, :] * self.weights
        return (prod.reshape(-1, len(self.nodes)) @ phase).reshape(self.nmax, self.nmax, -1)


@dataclass(frozen=True, eq=False)
class LocalizedBasis:
    """Separable localized orbitals centred at the origin of an orthorhombic cell."""

    cell: UnitCell
    lengths: tuple
    power: int
    orbitals: tuple

    def __post_init__(self):
        if not self.cell.is_orthorhombic:
            raise ConfigError("localized orbitals need an orthorhombic cell")
        sides = np.diag(self.cell.vectors)
        lengths = tuple(float(v) for v in self.lengths)
        if len(lengths) != 3 or any(l <= 0 or l > s + 1e-12 for l, s in zip(lengths, sides)):
            raise ConfigError(f"support lengths {lengths} must fit inside the cell {tuple(sides)}")
        orbitals = tuple(tuple(int(m) for m in o) for o in self.orbitals)
        if len(set(orbitals)) != len(orbitals):
            raise ConfigError("basis orbitals must be distinct")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "orbitals", orbitals)

    @property
    def size(self) -> int:
        return len(self.orbitals)

    @cached_property
    def axes(self) -> tuple:
        nmax = np.max(np.array(self.orbitals), axis=0) + 1
        return tuple(Envelope1D(l, self.power, int(n)) for l, n in zip(self.lengths, nmax))

    @cached_property
    def _index(self) -> np.ndarray:
        return np.array(self.orbitals)

    def values(self, r) -> np.ndarray:
        """``w_mu(r)`` for points in the home cell, shape ``(size, len(r))``."""
        r = np.atleast_2d(np.asarray(r, dtype=float))
        per_axis = [ax.values(r[:, d]) for d, ax in enumerate(self.axes)]
        idx = self._index
        return per_axis[0][idx[:, 0]] * per_axis[1][idx[:, 1]] * per_axis[2][idx[:, 2]]

    def kinetic(self) -> np.ndarray:
        """``<w_mu| -Laplacian |w_nu>``."""
        idx = self._index
        out = np.zeros((self.size, self.size))
        for d, ax in enumerate(self.axes):
            t = ax.kinetic()[np.ix_(idx[:, d], idx[:, d])]
            others = [e for e in range(3) if e != d]
            same = np.all(idx[:, None, others] == idx[None, :, others], axis=2)
            out += t * same
        return out

    def fourier(self, p) -> np.ndarray:
        """``int w_mu(r) exp(-i p.r) dr``, shape ``(size, len(p))``."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        idx = self._index
        out = np.ones((self.size, len(p)), dtype=complex)
        for d, ax in enumerate(self.axes):
            out *= ax.fourier(p[:, d])[idx[:, d]]
        return out

    def form_factor(self, p) -> np.ndarray:
        """``F_{mu nu}(p) = int w_mu w_nu exp(-i p.r) dr``, shape ``(size, size, len(p))``."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        idx = self._index
        out = np.ones((self.size, self.size, len(p)), dtype=complex)
        for d, ax in enumerate(self.axes):
            f = ax.pair_fourier(p[:, d])
            out *= f[np.ix_(idx[:, d], idx[:, d])]
        return out


# -- band model -------------------------------------------------------------


def _as_key(r) -> tuple:
    key = tuple(int(v) for v in r)
    if len(key) != 3:
        raise ConfigError(f"lattice vector key {r} must have three integers")
    return key


@dataclass(frozen=True, eq=False)
class BandModel:
    """Localized basis plus tight-binding table ``{R: H_R}`` keyed by integer lattice vectors.

    ``h(k) = sum_R H_R exp(i k.R)``; Hermiticity requires ``H_{-R} = H_R^dagger``.
    The lowest ``n_occ`` bands of ``h`` are occupied and the next ``n_vir`` virtual.
    """

    basis: LocalizedBasis
    hamiltonian_fourier: dict
    n_occ: int
    n_vir: int
    gap_floor: float = 0.1
    name: str = "custom"

    def __post_init__(self):
        nb = self.basis.size
        table = {}
        for r, h in self.hamiltonian_fourier.items():
            h = np.array(h, dtype=complex)
            if h.shape != (nb, nb):
                raise ConfigError(f"H_R for R={r} must be {nb}x{nb}")
            table[_as_key(r)] = h
        for r, h in table.items():
            partner = table.get(tuple(-v for v in r))
            if partner is None or not np.allclose(partner, h.conj().T, atol=1e-13):
                raise ConfigError(f"H_R table is not Hermitian-generating at R={r}")
        if self.n_occ < 1 or self.n_vir < 1 or self.n_occ + self.n_vir > nb:
            raise ConfigError(f"need 1 <= n_occ, n_vir and n_occ + n_vir <= {nb}")
        if self.gap_floor <= 0:
            raise ConfigError("gap_floor must be positive")
        object.__setattr__(self, "hamiltonian_fourier", table)

    @property
    def cell(self) -> UnitCell:
        return self.basis.cell

    @property
    def n_bands(self) -> int:
        return self.n_occ + self.n_vir

    @property
    def is_flat(self) -> bool:
        """True when ``h(k)`` has no inter-cell terms, so orbitals do not depend on ``k``."""
        return all(r == (0, 0, 0) or not np.any(h) for r, h in self.hamiltonian_fourier.items())

    def h(self, k) -> np.ndarray:
        """``h(k)`` for cartesian ``k`` of shape ``(..., 3)``."""
        k = np.asarray(k, dtype=float)
        out = np.zeros(k.shape[:-1] + (self.basis.size,) * 2, dtype=complex)
        a = self.cell.vectors
        for r, hr in self.hamiltonian_fourier.items():
            phase = np.exp(1j * (k @ (np.array(r, dtype=float) @ a)))
            out += phase[..., None, None] * hr
        return out

    @cached_property
    def gauge_reference(self) -> np.ndarray:
        """Per band, the basis component with the largest mean modulus over a dense sample."""
        mesh = build_mesh(reciprocal_of(self.cell), (6, 6, 6))
        _, vecs = np.linalg.eigh(self.h(mesh.points))
        mean = np.abs(vecs[..., : self.n_bands]).mean(axis=0)
        return np.argmax(mean, axis=0)


def gauge_fix(raw_coeffs, reference, threshold: float = GAUGE_THRESHOLD) -> np.ndarray:
    """Rotate each column by a unit phase so its ``reference`` component is real and positive.

    ``raw_coeffs`` has shape ``(..., n_basis, n_bands)`` and ``reference`` one index per band.
    """
    raw = np.asarray(raw_coeffs, dtype=complex)
    ref = np.asarray(reference)
    comp = np.take_along_axis(raw, ref[None, :].reshape((1,) * (raw.ndim - 2) + (1, -1)), axis=-2)
    mod = np.abs(comp)
    if np.any(mod < threshold):
        raise GaugeObstructionError(f"gauge component fell to {mod.min():.2e} (threshold {threshold})")
    return raw * (comp.conj() / mod)


@dataclass(frozen=True, eq=False)
class OrbitalTable:
    """Gauge-fixed band coefficients ``U[k, mu, n]`` on a mesh."""

    model: BandModel
    mesh: KMesh
    coeffs: np.ndarray
    band_energies: np.ndarray
    gauge: np.ndarray

    @property
    def basis(self) -> LocalizedBasis:
        return self.model.basis

    @property
    def n_occ(self) -> int:
        return self.model.n_occ

    @property
    def n_vir(self) -> int:
        return self.model.n_vir

    @property
    def n_bands(self) -> int:
        return self.model.n_bands

    @cached_property
    def k_independent(self) -> bool:
        return bool(np.all(self.coeffs == self.coeffs[:1]))

    def pw_coefficients(self, shells) -> np.ndarray:
        """Plane-wave coefficients ``c_n(k, G)`` on ``shells``, shape ``(N_k, n_bands, N_G)``.

        ``psi_nk = |Omega|^{-1/2} sum_G c_n(k, G) exp(i(k+G).r)``; the expansion is
        exact only in the limit of a complete shell set.
        """
        out = []
        vol = self.model.cell.volume
        for kidx, k in enumerate(self.mesh.points):
            what = self.basis.fourier(k + shells.vectors) / np.sqrt(vol)
            out.append(self.coeffs[kidx].T @ what)
        return np.array(out)


def solve_bands(model: BandModel, mesh: KMesh) -> OrbitalTable:
    """Diagonalize ``h(k)`` on the mesh, check the gap and fix the gauge."""
    energies, vecs = np.linalg.eigh(model.h(mesh.points))
    nb = model.n_bands
    kept = energies[:, : min(nb + 1, energies.shape[1])]
    if np.any(np.diff(kept, axis=1) < DEGENERACY_TOL):
        raise DegeneracyError("degenerate bands on the mesh; the model must be regenerated")
    gap = energies[:, model.n_occ].min() - energies[:, model.n_occ - 1].max()
    if gap < model.gap_floor:
        raise NotAnInsulatorError(f"band gap {gap:.3e} below the floor {model.gap_floor}")
    coeffs = gauge_fix(vecs[:, :, :nb], model.gauge_reference)
    coeffs.setflags(write=False)
    return OrbitalTable(model, mesh, coeffs, energies[:, :nb], model.gauge_reference)


def pair_density(orbitals: OrbitalTable, n_prime: int, k_prime: int, n: int, k: int, G) -> complex:
    """``<psi_{n'k'}| exp(i(k' - k - G).r) |psi_{nk}>`` for mesh indices ``k', k``."""
    pts = orbitals.mesh.points
    p = pts[k] - pts[k_prime] + np.asarray(G, dtype=float)
    f = orbitals.basis.form_factor(p[None, :])[:, :, 0]
    return complex(orbitals.coeffs[k_prime][:, n_prime].conj() @ f @ orbitals.coeffs[k][:, n])


# -- electron repulsion integrals ------------------------------------------


def default_eri_cutoff(basis: LocalizedBasis, tol: float = ERI_TAIL) -> float:
    """Smallest ``|p|`` beyond which every ``|F(p)|^2/|p|^2`` along a coordinate axis is below ``tol``."""
    g = 1.0
    while True:
        worst = 0.0
        for ax in basis.axes:
            f = np.abs(ax.pair_fourier(np.array([g, 1.5 * g])))
            worst = max(worst, f.max())
        if worst * worst / (g * g) < tol:
            return g
        g *= 1.1


class EriEvaluator:
    """Normalized ERIs ``<n1k1,n2k2|n3k3,n4k4>`` with the ``q + G = 0`` term omitted.

    The localized-basis kernel ``V(q)[mu1,mu2,mu3,mu4]`` is built once per momentum
    transfer on the mesh; band ERIs rotate it with the orbital coefficients.
    ``eri_scale`` multiplies every integral, which gives weak-coupling variants.
    """

    def __init__(self, orbitals: OrbitalTable, g_cutoff: float | None = None, eri_scale: float = 1.0):
        if eri_scale <= 0:
            raise ConfigError("eri_scale must be positive")
        self.orbitals = orbitals
        self.eri_scale = float(eri_scale)
        self.mesh = orbitals.mesh
        self.cell = orbitals.model.cell
        self.recip = reciprocal_of(self.cell)
        self.g_cutoff = float(g_cutoff) if g_cutoff is not None else default_eri_cutoff(orbitals.basis)
        self.n_occ = orbitals.n_occ
        self.n_vir = orbitals.n_vir
        self._kernel = None

    @property
    def nk(self) -> int:
        return self.mesh.nk

    @property
    def k_independent(self) -> bool:
        return self.orbitals.k_independent

    def _axis_tables(self):
        """1D pair transforms on the lattice ``(t / n_d) b_d`` covering the cutoff."""
        tables, offsets = [], []
        b = np.diag(self.recip.vectors)
        for d, ax in enumerate(self.orbitals.basis.axes):
            n = self.mesh.dims[d]
            t_max = int(np.ceil(self.g_cutoff * n / b[d])) + n + 1
            t = np.arange(-t_max, t_max + 1)
            tables.append(ax.pair_fourier(t * b[d] / n))
            offsets.append(t_max)
        return tables, offsets

    @property
    def kernel(self) -> np.ndarray:
        """``V(q)`` in the localized basis for every mesh transfer ``q``, shape ``(N_k, nb, nb, nb, nb)``."""
        if self._kernel is None:
            self._kernel = self._build_kernel()
        return self._kernel

    def _build_kernel(self) -> np.ndarray:
        basis = self.orbitals.basis
        nb = basis.size
        idx = np.array(basis.orbitals)
        tables, offsets = self._axis_tables()
        tables = [tab[np.ix_(idx[:, d], idx[:, d])] for d, tab in enumerate(tables)]
        # Each chi_m has parity (-1)^m, so a 1D pair transform is (-i)^(m+n) times a real number.
        parity = idx[:, None, :] + idx[None, :, :]
        phase = (-1j) ** (parity.sum(axis=-1) % 4)
        real = []
        for d, tab in enumerate(tables):
            ph = (-1j) ** (parity[:, :, d] % 4)
            r = tab / ph[:, :, None]
            if np.abs(r.imag).max() > 1e-13 * max(np.abs(r).max(), 1.0):
                raise ArithmeticError("basis functions lost their parity")
            real.append(r.real)
        dims = np.array(self.mesh.dims)
        pref = 4.0 * np.pi / self.cell.volume * self.eri_scale
        pair_phase = (phase.reshape(-1)[:, None] * phase.reshape(-1).conj()[None, :]) * pref
        out = np.empty((self.nk, nb, nb, nb, nb), dtype=complex)
        for qidx, q in enumerate(self.mesh.points):
            shells = enumerate_shells(self.recip, self.g_cutoff, center=q)
            p = q + shells.vectors
            p2 = np.einsum("ij,ij->i", p, p)
            keep = p2 > 1e-20
            p2 = p2[keep]
            t = np.rint((self.mesh.frac[qidx] + shells.coefficients[keep]) * dims).astype(np.int64)
            f = real[0][:, :, t[:, 0] + offsets[0]]
            f = f * real[1][:, :, t[:, 1] + offsets[1]]
            f *= real[2][:, :, t[:, 2] + offsets[2]]
            a = f.reshape(nb * nb, -1)
            v = (a / p2) @ a.T
            out[qidx] = (pair_phase * v).reshape(nb, nb, nb, nb).transpose(0, 2, 1, 3)
        out.setflags(write=False)
        return out

    def _ranges(self, spec) -> list:
        o, v = self.n_occ, self.n_vir
        out = []
        for s in spec:
            if s == "o":
                out.append(np.arange(o))
            elif s == "v":
                out.append(np.arange(o, o + v))
            elif s == "a":
                out.append(np.arange(o + v))
            else:
                out.append(np.atleast_1d(np.asarray(s)))
        return out

    def block(self, spec, k1, k2, k3) -> np.ndarray:
        """ERIs for orbital ranges ``spec`` (``'o'``, ``'v'``, ``'a'`` or index arrays).

        ``k1, k2, k3`` are broadcastable mesh-index arrays; ``k4`` follows from
        conservation.  The result has shape ``broadcast + (n1, n2, n3, n4)``.
        """
        r1, r2, r3, r4 = self._ranges(spec)
        k1, k2, k3 = np.broadcast_arrays(*(np.asarray(k) for k in (k1, k2, k3)))
        k4 = self.mesh.kconserv[k1, k2, k3]
        q = self.mesh.sub_table[k3, k1]
        u = self.orbitals.coeffs
        if self.k_independent:
            return self.band_kernel[np.ix_(np.arange(self.nk), r1, r2, r3, r4)][q]
        v = self.kernel[q]
        v = np.einsum("...mnop,...ma->...anop", v, u[k1][..., r1].conj())
        v = np.einsum("...anop,...nb->...abop", v, u[k2][..., r2].conj())
        v = np.einsum("...abop,...oc->...abcp", v, u[k3][..., r3])
        return np.einsum("...abcp,...pd->...abcd", v, u[k4][..., r4])

    @cached_property
    def band_kernel(self) -> np.ndarray:
        """Band-basis ``V(q)[n1,n2,n3,n4]`` for k-independent orbitals, shape ``(N_k, nb, nb, nb, nb)``."""
        if not self.k_independent:
            raise ConfigError("a transfer-only kernel needs k-independent orbitals")
        c = self.orbitals.coeffs[0]
        v = self.kernel
        if c.shape[0] == c.shape[1] and np.array_equal(c, np.eye(c.shape[0])):
            return v
        v = np.einsum("qmnop,ma->qanop", v, c.conj())
        v = np.einsum("qanop,nb->qabop", v, c.conj())
        v = np.einsum("qabop,oc->qabcp", v, c)
        out = np.einsum("qabcp,pd->qabcd", v, c)
        out.setflags(write=False)
        return out

    def q_kernel(self, spec) -> np.ndarray:
        """Slice of :attr:`band_kernel` for orbital ranges ``spec``, shape ``(N_k, n1, n2, n3, n4)``."""
        r1, r2, r3, r4 = self._ranges(spec)
        return self.band_kernel[np.ix_(np.arange(self.nk), r1, r2, r3, r4)]

    def eri(self, n1, k1, n2, k2, n3, k3, n4, k4) -> complex:
        """Single ERI for band indices and mesh indices; checks momentum conservation."""
        if self.mesh.kconserv[k1, k2, k3] != k4:
            raise InvalidTupleError(f"k1 + k2 - k3 - k4 is not a reciprocal lattice vector for {(k1, k2, k3, k4)}")
        return complex(self.block(([n1], [n2], [n3], [n4]), k1, k2, k3)[0, 0, 0, 0])


# -- orbital energies --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OrbitalEnergySet:
    """Orbital energies ``eps[k, n]``; the corrected set carries ``+xi`` on occupied bands."""

    eps: np.ndarray
    n_occ: int
    corrected: bool = False
    xi_used: float = 0.0

    @property
    def occ(self) -> np.ndarray:
        return self.eps[:, : self.n_occ]

    @property
    def vir(self) -> np.ndarray:
        return self.eps[:, self.n_occ:]

    def with_correction(self, xi: float) -> "OrbitalEnergySet":
        if self.corrected:
            raise ConfigError("energies are already corrected")
        eps = self.eps.copy()
        eps[:, : self.n_occ] += xi
        return OrbitalEnergySet(eps, self.n_occ, True, float(xi))


def kinetic_energies(orbitals: OrbitalTable) -> np.ndarray:
    """``<psi_nk| -Laplacian |psi_nk>``, shape ``(N_k, n_bands)``."""
    t = orbitals.basis.kinetic()
    u = orbitals.coeffs
    return np.einsum("kma,mn,kna->ka", u.conj(), t, u).real


def _mean_field(ev: EriEvaluator) -> np.ndarray:
    nk, no = ev.nk, ev.n_occ
    occ = np.arange(no)
    if ev.k_independent:
        v = ev.q_kernel("aaaa")
        direct = np.einsum("inin->n", v[0][occ][:, :, occ])
        exchange = np.einsum("qinni->n", v[:, occ][:, :, :, :, occ])
        field = 2.0 * direct - exchange / nk
        return np.broadcast_to(field, (nk, len(field))).copy()
    out = np.zeros((nk, ev.orbitals.n_bands), dtype=complex)
    kk = np.arange(nk)
    for ki in range(nk):
        d = ev.block(("o", "a", "o", "a"), ki, kk, ki)
        x = ev.block(("o", "a", "a", "o"), ki, kk, kk)
        out += 2.0 * np.einsum("kinin->kn", d) - np.einsum("kinni->kn", x)
    return out / nk


def orbital_energies(ev: EriEvaluator, mesh: KMesh | None = None, corrected: bool = False,
                     xi: float = 0.0) -> OrbitalEnergySet:
    """Kinetic plus mean-field energies on the evaluator's mesh, optionally shifted by ``xi``."""
    if mesh is not None and not mesh.same_as(ev.mesh):
        raise MeshMismatchError("orbitals were built on a different mesh")
    field = _mean_field(ev)
    if np.abs(field.imag).max() > 1e-10:
        raise ArithmeticError("mean-field energies acquired an imaginary part")
    eps = kinetic_energies(ev.orbitals) + field.real
    base = OrbitalEnergySet(eps, ev.n_occ)
    return base.with_correction(xi) if corrected else base


def tdl_reference_energy(model: BandModel, band: int, k, fine_dims, xi: float | None = None) -> float:
    """Madelung-corrected orbital energy of ``band`` at cartesian ``k`` on a fine mesh.

    Corrected energies converge as ``O(1/N_k)``, so the fine-mesh value serves as
    the thermodynamic-limit proxy with an error of that order.
    """
    from .madelung import EwaldSpec, madelung_constant

    mesh = build_mesh(reciprocal_of(model.cell), fine_dims)
    try:
        kidx = int(mesh.index_of(np.asarray(k, dtype=float)))
    except OffMeshError as exc:
        raise MeshCompatibilityError(f"k = {np.asarray(k).tolist()} is not on the {tuple(fine_dims)} mesh") from exc
    if xi is None:
        xi = madelung_constant(EwaldSpec(model.cell, mesh)).xi
    ev = EriEvaluator(solve_bands(model, mesh))
    eps = orbital_energies(ev, corrected=True, xi=xi)
    return float(eps.eps[kidx, band])


# -- presets -----------------------------------------------------------------

PRESET_CELL = 6.0
PRESET_LENGTHS = (6.0, 5.4, 4.8)
PRESET_POWER = 6
PRESET_ORBITALS = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))
PRESET_ONSITE = (-1.0, -0.5, 0.5, 1.0)
PRESET_HOPPING = 0.04


def insulator_model(n_occ: int = 2, n_vir: int = 2, hopping: float = 0.0, eri_name: str | None = None) -> BandModel:
    """Cubic 6 Bohr insulator with s-like and p-like localized orbitals.

    The two lowest onsite levels are occupied.  With ``hopping = 0`` the bands are
    flat and the orbitals do not depend on ``k``; a nonzero ``hopping`` adds
    nearest-neighbour couplings, including weak occupied-virtual mixing.
    """
    if not 1 <= n_occ <= 2 or not 1 <= n_vir <= 2:
        raise ConfigError("the preset offers 1 or 2 occupied and 1 or 2 virtual bands")
    cell = UnitCell.cubic(PRESET_CELL)
    orbitals = PRESET_ORBITALS[2 - n_occ: 2 + n_vir]
    onsite = np.diag(PRESET_ONSITE[2 - n_occ: 2 + n_vir])
    basis = LocalizedBasis(cell, PRESET_LENGTHS, PRESET_POWER, orbitals)
    table = {(0, 0, 0): onsite}
    if hopping:
        nb = len(orbitals)
        rng = np.random.default_rng(7)
        for axis in range(3):
            r = [0, 0, 0]
            r[axis] = 1
            h = hopping * (np.eye(nb) * (1.0 + 0.3 * axis) + 0.3 * rng.standard_normal((nb, nb)))
            table[tuple(r)] = h
            table[tuple(-v for v in r)] = h.conj().T
    name = eri_name or f"insulator-{n_occ}x{n_vir}" + ("-dispersive" if hopping else "")
    return BandModel(basis, table, n_occ, n_vir, gap_floor=0.2, name=name)


def preset_model(name: str) -> BandModel:
    """Builtin models: ``insulator-AxB`` (flat) and ``insulator-AxB-dispersive``."""
    parts = name.split("-")
    try:
        if parts[0] != "insulator" or len(parts) > 3:
            raise ValueError
        n_occ, n_vir = (int(v) for v in parts[1].split("x"))
        dispersive = len(parts) == 3
        if dispersive and parts[2] != "dispersive":
            raise ValueError
    except (ValueError, IndexError):
        raise ConfigError(f"unknown model preset {name!r}") from None
    return insulator_model(n_occ, n_vir, PRESET_HOPPING if dispersive else 0.0)
