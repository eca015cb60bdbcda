"""Madelung constant of a k-mesh supercell by Ewald partitioning.

For a Gamma-centred mesh ``K`` the constant is

    xi = (1/N_k) sum_{q in K} sum'_G (4 pi/|Omega|) exp(-sigma|q+G|^2)/|q+G|^2
         - 1/sqrt(pi sigma) - 4 pi sigma/(N_k |Omega|)
         + sum'_{R in L_K} erfc(|R| / (2 sqrt(sigma))) / |R|

where primes drop the ``q+G = 0`` and ``R = 0`` terms and ``L_K`` is the
supercell lattice spanned by ``n_d a_d``.  The second term is the normalized
integral of ``h_sigma`` over the zone and the third is the neutralizing
background, written per supercell volume ``N_k |Omega|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcinv

from .errors import AccuracyError, OffMeshError
from .lattice_mesh import KMesh, UnitCell, enumerate_shells, reciprocal_of

TAIL_TOL = 1e-13
ZERO_MODE = 1e-10


def default_sigma(cell: UnitCell) -> float:
    return (cell.volume ** (1.0 / 3.0) / (2.0 * np.pi)) ** 2 * np.pi


def _recip_tail(sigma, gc, prefactor):
    return prefactor * np.exp(-sigma * gc * gc) / (gc * gc)


def _real_tail(sigma, rc):
    return erfc(rc / (2.0 * np.sqrt(sigma))) / rc


@dataclass(frozen=True, eq=False)
class EwaldSpec:
    """Ewald parameters; cutoffs left as ``None`` are chosen from ``sigma`` by tail bounds."""

    cell: UnitCell
    mesh: KMesh
    sigma: float | None = None
    recip_cutoff: float | None = None
    real_cutoff: float | None = None
    tail_tol: float = TAIL_TOL

    def __post_init__(self):
        if not self.mesh.gamma_centered:
            raise OffMeshError("the Ewald sum needs a Gamma-centred mesh")
        sigma = default_sigma(self.cell) if self.sigma is None else float(self.sigma)
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "sigma", sigma)
        pref = 4.0 * np.pi / (self.cell.volume * self.mesh.nk)
        if self.recip_cutoff is None:
            # exp(-sigma g^2)/g^2 < tol/pref, solved with a safety margin
            gc = np.sqrt(np.log(max(pref, 1.0) / self.tail_tol) / sigma) * 1.05 + 1e-3
            object.__setattr__(self, "recip_cutoff", float(gc))
        if self.real_cutoff is None:
            rc = 2.0 * np.sqrt(sigma) * erfcinv(self.tail_tol) * 1.05
            object.__setattr__(self, "real_cutoff", float(rc))
        if _recip_tail(sigma, self.recip_cutoff, pref) > self.tail_tol:
            raise AccuracyError(f"reciprocal cutoff {self.recip_cutoff} too small for sigma={sigma}")
        if _real_tail(sigma, self.real_cutoff) > self.tail_tol:
            raise AccuracyError(f"real-space cutoff {self.real_cutoff} too small for sigma={sigma}")

    @property
    def nk(self) -> int:
        return self.mesh.nk

    def with_sigma(self, sigma: float) -> "EwaldSpec":
        return EwaldSpec(self.cell, self.mesh, sigma, tail_tol=self.tail_tol)


@dataclass(frozen=True)
class MadelungResult:
    xi: float
    sigma_used: float
    n_recip_terms: int
    n_real_terms: int


def _h_sum(q, spec: EwaldSpec):
    recip = reciprocal_of(spec.cell)
    shells = enumerate_shells(recip, spec.recip_cutoff, center=q)
    g = np.asarray(q, dtype=float) + shells.vectors
    g2 = np.einsum("ij,ij->i", g, g)
    keep = g2 > ZERO_MODE**2
    terms = np.exp(-spec.sigma * g2[keep]) / g2[keep]
    return 4.0 * np.pi / spec.cell.volume * terms.sum(), int(keep.sum())


def h_sigma(q, spec: EwaldSpec) -> float:
    """Screened lattice sum ``sum_G (4 pi/|Omega|) exp(-sigma|q+G|^2)/|q+G|^2`` with ``q+G=0`` dropped."""
    return float(_h_sum(q, spec)[0])


def integral_h_sigma(spec: EwaldSpec) -> float:
    """Exact ``int_{Omega*} h_sigma``: the G-sum unfolds to ``(4 pi/|Omega|) 2 pi^{3/2} / sqrt(sigma)``."""
    return 4.0 * np.pi / spec.cell.volume * 2.0 * np.pi**1.5 / np.sqrt(spec.sigma)


def _reciprocal_term(spec: EwaldSpec):
    total = 0.0
    count = 0
    for q in spec.mesh.points:
        value, n = _h_sum(q, spec)
        total += value
        count += n
    return total / spec.nk, count


def _real_term(spec: EwaldSpec):
    supercell = spec.cell.vectors * np.array(spec.mesh.dims, dtype=float)[:, None]
    shells = enumerate_shells(supercell, spec.real_cutoff)
    r = np.linalg.norm(shells.vectors, axis=1)
    r = r[r > 0]
    return float(np.sum(erfc(r / (2.0 * np.sqrt(spec.sigma))) / r)), len(r)


def madelung_constant(spec: EwaldSpec) -> MadelungResult:
    recip, n_recip = _reciprocal_term(spec)
    real, n_real = _real_term(spec)
    zone = reciprocal_of(spec.cell).bz_volume
    integral = integral_h_sigma(spec) / zone
    background = 4.0 * np.pi * spec.sigma / (spec.nk * spec.cell.volume)
    xi = recip - integral - background + real
    return MadelungResult(float(xi), spec.sigma, n_recip, n_real)


def madelung_from_subtraction(spec: EwaldSpec) -> float:
    """Quadrature minus normalized integral of ``h_sigma``; equals ``xi`` up to ``O(1/N_k)``."""
    recip, _ = _reciprocal_term(spec)
    zone = reciprocal_of(spec.cell).bz_volume
    return float(recip - integral_h_sigma(spec) / zone)
