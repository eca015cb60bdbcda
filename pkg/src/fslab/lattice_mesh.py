"""Cell geometry, Monkhorst-Pack meshes and crystal-momentum arithmetic.

Mesh points are addressed by integer fractional indices ``(i1, i2, i3)`` with
``0 <= i_d < n_d``; the flat index is ``(i1*n2 + i2)*n3 + i3``, so a per-k array
reshaped to ``dims`` is laid out for ``numpy.fft`` over the mesh group.
Cartesian points are folded into the zone ``[-1/2, 1/2)`` in fractional
coordinates.  All membership and conservation tests use the integer indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateCellError, MeshMismatchError, OffMeshError, ResourceError

TWO_PI = 2.0 * np.pi
MAX_SHELL_VECTORS = 4_000_000


@dataclass(frozen=True, eq=False)
class UnitCell:
    """Real-space cell with lattice vectors as the rows of ``vectors`` (Bohr)."""

    vectors: np.ndarray

    def __post_init__(self):
        a = np.array(self.vectors, dtype=float)
        if a.shape != (3, 3):
            raise DegenerateCellError(f"cell needs three 3-vectors, got shape {a.shape}")
        det = np.linalg.det(a)
        if abs(det) < 1e-10 * max(1.0, np.abs(a).max() ** 3):
            raise DegenerateCellError("lattice vectors are linearly dependent")
        if det < 0:
            raise DegenerateCellError("lattice vectors must form a right-handed basis")
        a.setflags(write=False)
        object.__setattr__(self, "vectors", a)

    @classmethod
    def cubic(cls, a: float) -> "UnitCell":
        return cls(a * np.eye(3))

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.vectors))

    @property
    def is_orthorhombic(self) -> bool:
        a = self.vectors
        return bool(np.allclose(a, np.diag(np.diag(a)), atol=1e-14))


@dataclass(frozen=True, eq=False)
class ReciprocalLattice:
    """Reciprocal basis with vectors as the rows of ``vectors`` (Bohr^-1)."""

    vectors: np.ndarray

    def __post_init__(self):
        b = np.array(self.vectors, dtype=float)
        if b.shape != (3, 3) or abs(np.linalg.det(b)) < 1e-14:
            raise DegenerateCellError("reciprocal basis is singular")
        b.setflags(write=False)
        object.__setattr__(self, "vectors", b)

    @classmethod
    def unit_cube(cls) -> "ReciprocalLattice":
        """Period cell ``[-1/2, 1/2]^3`` used by the quadrature lemmas."""
        return cls(np.eye(3))

    @property
    def bz_volume(self) -> float:
        return float(abs(np.linalg.det(self.vectors)))

    @cached_property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.vectors)

    def to_fractional(self, k) -> np.ndarray:
        return np.asarray(k, dtype=float) @ self.inverse

    def to_cartesian(self, frac) -> np.ndarray:
        return np.asarray(frac, dtype=float) @ self.vectors


def reciprocal_of(cell: UnitCell) -> ReciprocalLattice:
    """Return ``b`` with ``b_i . a_j = 2 pi delta_ij``."""
    if cell.volume <= 0:
        raise DegenerateCellError("cell volume must be positive")
    return ReciprocalLattice(TWO_PI * np.linalg.inv(cell.vectors).T)


def fold_to_bz(recip: ReciprocalLattice, k):
    """Split ``k`` into ``k_folded + G0`` with fractional ``k_folded`` in ``[-1/2, 1/2)``."""
    frac = recip.to_fractional(k)
    shift = np.floor(frac + 0.5)
    folded = frac - shift
    return recip.to_cartesian(folded), recip.to_cartesian(shift)


@dataclass(frozen=True, eq=False)
class KMesh:
    """Uniform mesh of ``n1*n2*n3`` points in the Brillouin zone."""

    recip: ReciprocalLattice
    dims: tuple
    gamma_centered: bool = True
    _index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or any(n < 1 for n in dims):
            raise ValueError(f"mesh dims must be three positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        grids = np.meshgrid(*(np.arange(n) for n in dims), indexing="ij")
        index = np.stack([g.ravel() for g in grids], axis=1)
        index.setflags(write=False)
        object.__setattr__(self, "_index", index)

    @property
    def nk(self) -> int:
        return int(np.prod(self.dims))

    def __len__(self) -> int:
        return self.nk

    @property
    def int_index(self) -> np.ndarray:
        """Integer fractional indices, shape ``(N_k, 3)``, lexicographic order."""
        return self._index

    @cached_property
    def frac(self) -> np.ndarray:
        n = np.array(self.dims, dtype=float)
        raw = self._index / n
        if not self.gamma_centered:
            raw = raw + 0.5 / n
        folded = raw - np.floor(raw + 0.5)
        folded.setflags(write=False)
        return folded

    @cached_property
    def points(self) -> np.ndarray:
        pts = self.recip.to_cartesian(self.frac)
        pts.setflags(write=False)
        return pts

    def flat_index(self, idx) -> np.ndarray:
        """Flat mesh index of integer fractional indices (taken modulo ``dims``)."""
        idx = np.asarray(idx) % np.array(self.dims)
        n1, n2, n3 = self.dims
        return (idx[..., 0] * n2 + idx[..., 1]) * n3 + idx[..., 2]

    def index_of(self, k) -> int | np.ndarray:
        """Flat index of cartesian point(s) ``k``; raises if any is off-mesh."""
        n = np.array(self.dims, dtype=float)
        x = self.recip.to_fractional(k) * n
        if not self.gamma_centered:
            x = x - 0.5
        r = np.rint(x)
        if np.any(np.abs(x - r) > 1e-8):
            raise OffMeshError(f"point {np.asarray(k).tolist()} is not on the {self.dims} mesh")
        return self.flat_index(r.astype(np.int64))

    def _require_gamma(self):
        if not self.gamma_centered:
            raise OffMeshError("momentum arithmetic is only closed on Gamma-centred meshes")

    @cached_property
    def sub_table(self) -> np.ndarray:
        """``sub_table[x, y]`` is the index of ``k_x - k_y`` folded back onto the mesh."""
        self._require_gamma()
        diff = self._index[:, None, :] - self._index[None, :, :]
        table = self.flat_index(diff)
        table.setflags(write=False)
        return table

    @cached_property
    def add_table(self) -> np.ndarray:
        self._require_gamma()
        table = self.flat_index(self._index[:, None, :] + self._index[None, :, :])
        table.setflags(write=False)
        return table

    @cached_property
    def minus(self) -> np.ndarray:
        """Index of ``-k`` for every mesh point."""
        self._require_gamma()
        out = self.flat_index(-self._index)
        out.setflags(write=False)
        return out

    @cached_property
    def kconserv(self) -> np.ndarray:
        """``kconserv[k1, k2, k3]`` is the index of ``k4 = k1 + k2 - k3``."""
        self._require_gamma()
        idx = self._index
        k4 = idx[:, None, None, :] + idx[None, :, None, :] - idx[None, None, :, :]
        table = self.flat_index(k4)
        table.setflags(write=False)
        return table

    @property
    def gamma_index(self) -> int:
        self._require_gamma()
        return 0

    def same_as(self, other: "KMesh") -> bool:
        return (
            self.dims == other.dims
            and self.gamma_centered == other.gamma_centered
            and np.array_equal(self.recip.vectors, other.recip.vectors)
        )

    def require_same(self, other: "KMesh"):
        if not self.same_as(other):
            raise MeshMismatchError(f"mesh {self.dims} does not match mesh {other.dims}")


def build_mesh(recip: ReciprocalLattice, dims, gamma_centered: bool = True) -> KMesh:
    return KMesh(recip, tuple(dims), gamma_centered)


def conserve_momentum(mesh: KMesh, k_i, k_j, k_a) -> np.ndarray:
    """Cartesian ``k_b`` on the mesh with ``k_i + k_j - k_a - k_b`` in the reciprocal lattice."""
    i, j, a = (mesh.index_of(k) for k in (k_i, k_j, k_a))
    return mesh.points[mesh.kconserv[i, j, a]]


@dataclass(frozen=True, eq=False)
class LatticeShellSet:
    """Lattice vectors with ``|v| <= cutoff``; ``coefficients`` are their integer coordinates."""

    vectors: np.ndarray
    coefficients: np.ndarray
    cutoff: float

    def __len__(self) -> int:
        return len(self.vectors)


def _basis_of(lattice) -> np.ndarray:
    if isinstance(lattice, (UnitCell, ReciprocalLattice)):
        return lattice.vectors
    basis = np.asarray(lattice, dtype=float)
    if basis.shape != (3, 3):
        raise DegenerateCellError("lattice basis must be 3x3")
    return basis


def enumerate_shells(lattice, cutoff: float, max_vectors: int = MAX_SHELL_VECTORS,
                     center=None) -> LatticeShellSet:
    """All lattice vectors within ``cutoff`` (of ``-center`` when given), lexicographic order.

    With ``center`` the set is ``{v : |center + v| <= cutoff}``, which is what a
    shifted sum such as ``sum_G f(q + G)`` needs; it is inversion symmetric only
    for ``center = 0``.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    basis = _basis_of(lattice)
    inv = np.linalg.inv(basis)
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    mid = -c @ inv
    half = cutoff * np.linalg.norm(inv, axis=0)
    lo = np.floor(mid - half).astype(np.int64)
    hi = np.ceil(mid + half).astype(np.int64)
    box = int(np.prod(hi - lo + 1))
    if box > 8 * max_vectors:
        raise ResourceError(f"shell enumeration would scan {box} lattice points")
    grids = np.meshgrid(*(np.arange(l, h + 1) for l, h in zip(lo, hi)), indexing="ij")
    coeffs = np.stack([g.ravel() for g in grids], axis=1)
    vecs = coeffs @ basis
    keep = np.linalg.norm(vecs + c, axis=1) <= cutoff * (1.0 + 1e-12)
    if keep.sum() > max_vectors:
        raise ResourceError(f"{int(keep.sum())} lattice vectors exceed the bound {max_vectors}")
    return LatticeShellSet(vecs[keep], coeffs[keep], float(cutoff))
