"""Closed-shell periodic CCD: contraction map, CCD(n), converged CCD and norms.

Amplitudes ``T[ki, kj, ka, i, j, a, b]`` are normalized so that the correlation
energy is ``(1/N_k^3) sum (2<ij|ab> - <ij|ba>) T``; ``kb`` follows from
momentum conservation.  The contraction map ``A(T)`` is assembled from the
kappa/chi intermediates with the permutation ``P(X)_IJ^AB = X_IJ^AB + X_JI^BA``,
and the amplitude equation reads ``eps_IJAB T = A(T)`` with
``eps_IJAB = e_i + e_j - e_a - e_b``.  The Madelung-corrected variant shifts the
occupied energies by ``xi`` and replaces ``A(T)`` by ``A(T) + 2 xi T``.

Two backends evaluate ``A``:

* ``general`` works on full ``(k_i, k_j, k_a)`` blocks for any orbital table;
* ``reduced`` applies when the orbitals do not depend on ``k``.  ERIs then depend
  on the momentum transfer only, every amplitude produced from ``T = 0`` has the
  form ``T(ki, kj, ka) = tau(ka - ki)``, and all mesh sums become convolutions
  over the mesh group, evaluated by FFT.
"""

from __future__ import annotations

import json
import weakref
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError, MeshMismatchError, ResourceError, SingularDenominatorError
from .lattice_mesh import KMesh
from .model_system import EriEvaluator, OrbitalEnergySet

DENOMINATOR_FLOOR = 1e-8
DIVERGENCE_NORM = 1e6
GENERAL_MEMORY_LIMIT = 2 * 1024**3


# -- amplitudes ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AmplitudeTensor:
    """Doubles amplitudes on a mesh.

    Full storage has shape ``(N_k, N_k, N_k, n_occ, n_occ, n_vir, n_vir)`` indexed
    ``[ki, kj, ka, i, j, a, b]``.  Reduced storage has shape
    ``(N_k, n_occ, n_occ, n_vir, n_vir)`` and stands for ``T(ki, kj, ka) = tau[ka - ki]``.
    """

    data: np.ndarray
    mesh: KMesh
    reduced: bool = False

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex)
        nk = self.mesh.nk
        lead = (nk,) if self.reduced else (nk, nk, nk)
        if d.ndim != len(lead) + 4 or d.shape[: len(lead)] != lead:
            raise ConfigError(f"amplitude shape {d.shape} does not fit a mesh of {nk} points")
        object.__setattr__(self, "data", d)

    @classmethod
    def zeros(cls, mesh: KMesh, n_occ: int, n_vir: int, reduced: bool = False) -> "AmplitudeTensor":
        lead = (mesh.nk,) if reduced else (mesh.nk,) * 3
        return cls(np.zeros(lead + (n_occ, n_occ, n_vir, n_vir), dtype=complex), mesh, reduced)

    @property
    def n_occ(self) -> int:
        return self.data.shape[-4]

    @property
    def n_vir(self) -> int:
        return self.data.shape[-1]

    def like(self, data) -> "AmplitudeTensor":
        return AmplitudeTensor(data, self.mesh, self.reduced)

    def full(self) -> "AmplitudeTensor":
        """Expanded copy in full storage."""
        if not self.reduced:
            return self
        k1, _, k3 = np.indices((self.mesh.nk,) * 3)
        return AmplitudeTensor(self.data[self.mesh.sub_table[k3, k1]], self.mesh)

    def swapped(self) -> np.ndarray:
        """``T_JI^BA`` laid out like ``T_IJ^AB``: the image under the pair permutation."""
        if self.reduced:
            return self.data[self.mesh.minus].transpose(0, 2, 1, 4, 3)
        return _swap_full(self.data, self.mesh)


def _swap_full(x, mesh: KMesh) -> np.ndarray:
    k1, k2, k3 = np.indices((mesh.nk,) * 3)
    k4 = mesh.kconserv[k1, k2, k3]
    return x[k2, k1, k4].transpose(0, 1, 2, 4, 3, 6, 5)


def permutation_defect(t: AmplitudeTensor) -> float:
    """``max |T_IJ^AB - T_JI^BA|``."""
    return float(np.abs(t.data - t.swapped()).max(initial=0.0))


def norm_1(t: AmplitudeTensor) -> float:
    """Average entrywise norm ``(1/N_k^3) sum |T|``; orbital indices are summed, not averaged."""
    nk = t.mesh.nk
    if t.reduced:
        return float(np.abs(t.data).sum() / nk)
    return float(np.abs(t.data).sum() / nk**3)


def norm_inf(t: AmplitudeTensor) -> float:
    return float(np.abs(t.data).max(initial=0.0))


def amplitude_singularity_scan(t: AmplitudeTensor, i: int, j: int, a: int, b: int,
                               ki: int = 0, kj: int = 0, axis: int = 0) -> np.ndarray:
    """``|T_ijab(ki, kj, ka)|`` for ``ka`` stepping through ``ki`` along one mesh axis."""
    mesh = t.mesh
    n = mesh.dims[axis]
    if min(mesh.dims) < 4:
        raise ConfigError("the singularity scan needs at least 4 points per axis")
    step = np.zeros(3, dtype=np.int64)
    step[axis] = 1
    base = mesh.int_index[ki]
    offsets = np.arange(-(n // 2), n - n // 2)
    ka = mesh.flat_index(base[None, :] + offsets[:, None] * step[None, :])
    if t.reduced:
        return np.abs(t.data[mesh.sub_table[ka, ki], i, j, a, b])
    return np.abs(t.data[ki, kj, ka, i, j, a, b])


# -- settings and reports -----------------------------------------------------


@dataclass(frozen=True)
class CorrectionSetting:
    """Which Madelung corrections are active: occupied energies and/or the contraction map."""

    correct_eps: bool
    correct_contraction: bool

    @property
    def name(self) -> str:
        return {(False, False): "none", (True, False): "eps",
                (False, True): "contraction", (True, True): "both"}[(self.correct_eps, self.correct_contraction)]

    @classmethod
    def named(cls, name: str) -> "CorrectionSetting":
        try:
            return SETTINGS[name]
        except KeyError:
            raise ConfigError(f"unknown correction setting {name!r}; choose from {sorted(SETTINGS)}") from None


SETTINGS = {
    "none": CorrectionSetting(False, False),
    "eps": CorrectionSetting(True, False),
    "contraction": CorrectionSetting(False, True),
    "both": CorrectionSetting(True, True),
}


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    residual_1norm: float
    energy: complex
    converged: bool
    max_permutation_defect: float = 0.0


@dataclass(frozen=True, eq=False)
class Intermediates:
    """Intermediate blocks of one contraction-map evaluation.

    Full layout (``reduced=False``), with the leading mesh indices named in brackets:

    * ``kappa_vv[ka, a, c]`` and ``kappa_oo[ki, k, i]``;
    * ``chi_oooo[kk, kl, ki, k, l, i, j]``;
    * ``chi_ovvo_plus[ka, kk, ki, a, k, i, c]`` for ``chi_IC^AK``;
    * ``chi_voov[ka, kk, kc, a, k, c, i]`` for ``chi_CI^AK``.

    In the reduced layout the kappas carry no mesh index, ``chi_oooo`` is indexed by
    ``kk - ki``, ``chi_ovvo_plus`` by ``ka - ki`` and ``chi_voov`` by ``kc - ka``.
    ``chi_vvvv`` equals ``<AB|CD>`` and is consumed on the fly, never stored.
    """

    kappa_vv: np.ndarray
    kappa_oo: np.ndarray
    chi_oooo: np.ndarray
    chi_ovvo_plus: np.ndarray
    chi_voov: np.ndarray
    reduced: bool = False


# -- general backend ------------------------------------------------------------


def _einsum(spec, a, b):
    """Two-operand einsum routed through batched ``matmul``.

    Letters shared by both operands and the output are batch axes, shared letters
    absent from the output are contracted, and the rest are free.
    """
    ins, out = spec.split("->")
    sa, sb = ins.split(",")
    batch = [c for c in out if c in sa and c in sb]
    summed = [c for c in sa if c in sb and c not in out]
    free_a = [c for c in sa if c not in sb]
    free_b = [c for c in sb if c not in sa]
    dims = dict(zip(sa, a.shape))
    dims.update(zip(sb, b.shape))
    size = lambda letters: int(np.prod([dims[c] for c in letters], dtype=np.int64))
    a2 = a.transpose([sa.index(c) for c in batch + free_a + summed]).reshape(
        size(batch), size(free_a), size(summed))
    b2 = b.transpose([sb.index(c) for c in batch + summed + free_b]).reshape(
        size(batch), size(summed), size(free_b))
    res = np.matmul(a2, b2).reshape([dims[c] for c in batch + free_a + free_b])
    order = batch + free_a + free_b
    return res.transpose([order.index(c) for c in out])


class GeneralEngine:
    """Block evaluation of ``A(T)`` over all ``(k_i, k_j, k_a)``."""

    reduced = False

    def __init__(self, ev: EriEvaluator, memory_limit: float = GENERAL_MEMORY_LIMIT):
        self.ev = ev
        self.mesh = ev.mesh
        nk, no, nv = ev.nk, ev.n_occ, ev.n_vir
        estimate = 16.0 * nk**3 * (no + nv) ** 4 * 2
        if estimate > memory_limit:
            raise ResourceError(f"general backend needs about {estimate / 2**30:.1f} GiB of ERI blocks")
        self.grid = np.indices((nk,) * 3)
        k1, k2, k3 = self.grid
        self.k4 = self.mesh.kconserv[k1, k2, k3]
        self.vvoo = ev.block("vvoo", k1, k2, k3)
        self.oovv = ev.block("oovv", k1, k2, k3)
        self.oooo = ev.block("oooo", k1, k2, k3)
        self.voov = ev.block("voov", k1, k2, k3)
        self.vovo = ev.block("vovo", k1, k2, k3)
        # W[k1,k2,k3][i,j,a,b] = 2<ij|ab> - <ij|ba>
        self.w = 2.0 * self.oovv - self.oovv[k1, k2, self.k4].swapaxes(-1, -2)
        pair = np.indices((nk, nk))
        self._pair = pair

    def constant(self) -> np.ndarray:
        k1, _, k3 = self.grid
        return self.vvoo[k3, self.k4, k1].transpose(0, 1, 2, 5, 6, 3, 4)

    def vvvv_slice(self, kc: int) -> np.ndarray:
        """``<a ka, b kb | c kc, d kd>`` for all ``(ka, kb)`` at fixed ``kc``."""
        return self.ev.block("vvvv", self._pair[0], self._pair[1], kc)

    def intermediates(self, t: np.ndarray) -> Intermediates:
        nk = self.mesh.nk
        kc_table = self.mesh.kconserv
        x, y, z = self.grid
        kappa_vv = -_einsum("xyzklcd,xyzklad->zac", self.w, t) / nk**2
        kappa_oo = _einsum("xyzklcd,xyzilcd->xki", self.w, t) / nk**2

        # chi_oooo on (kk, kl, ki), kj = kk + kl - ki
        kj = kc_table[x, y, z]
        chi4 = self.oooo.astype(complex)
        for kc in range(nk):
            chi4 = chi4 + _einsum("xyklcd,xyzijcd->xyzklij", self.oovv[:, :, kc], t[z, kj, kc]) / nk

        # chi_IC^AK on (ka, kk, ki), kc = ka + kk - ki
        kc = kc_table[x, y, z]
        w1 = self.voov.astype(complex)
        for kl in range(nk):
            kd = kc_table[z, kl, x]
            first = 2.0 * self.oovv[kl, y, kd] - self.oovv[kl, y, kc].swapaxes(-1, -2)
            w1 = w1 + (_einsum("xyzlkdc,xyzilad->xyzakic", first, t[z, kl, x])
                       - _einsum("xyzlkdc,xyzilda->xyzakic", self.oovv[kl, y, kd], t[z, kl, kd])) / (2 * nk)

        # chi_CI^AK on (ka, kk, kc), ki = ka + kk - kc
        ki = kc_table[x, y, z]
        w2 = self.vovo.astype(complex)
        for kl in range(nk):
            kd = kc_table[ki, kl, x]
            w2 = w2 - _einsum("xyzlkcd,xyzilda->xyzakci", self.oovv[kl, y, z], t[ki, kl, kd]) / (2 * nk)
        return Intermediates(kappa_vv, kappa_oo, chi4, w1, w2)

    def contract(self, t: np.ndarray) -> np.ndarray:
        nk = self.mesh.nk
        kc_table = self.mesh.kconserv
        k1, k2, k3 = self.grid
        k4 = self.k4
        im = self.intermediates(t)

        x_term = (_einsum("zac,xyzijcb->xyzijab", im.kappa_vv, t)
                  - _einsum("xki,xyzkjab->xyzijab", im.kappa_oo, t))

        hh = np.zeros_like(t)
        for kk in range(nk):
            kl = kc_table[k1, k2, kk]
            hh += _einsum("xyzklij,xyzklab->xyzijab", im.chi_oooo[kk, kl, k1], t[kk, kl, k3])
        hh /= nk

        pp = np.zeros_like(t)
        for kc in range(nk):
            v = self.vvvv_slice(kc)
            pp += _einsum("xyzabcd,xyzijcd->xyzijab", v[k3, k4], t[k1, k2, kc])
        pp /= nk

        ring = np.zeros_like(t)
        for kk in range(nk):
            kc = kc_table[k3, kk, k1]
            c1 = im.chi_ovvo_plus[k3, kk, k1]
            c2 = im.chi_voov[k3, kk, kc].swapaxes(-1, -2)
            ring += _einsum("xyzakic,xyzkjcb->xyzijab", 2.0 * c1 - c2, t[kk, k2, kc])
            ring -= _einsum("xyzakic,xyzkjbc->xyzijab", c1, t[kk, k2, k4])
            kc2 = kc_table[k3, kk, k2]
            ring -= _einsum("xyzakcj,xyzkibc->xyzijab", im.chi_voov[k3, kk, kc2], t[kk, k1, k4])
        ring /= nk

        perm = x_term + ring
        return self.constant() + perm + _swap_full(perm, self.mesh) + hh + pp

    def energy(self, t: np.ndarray) -> complex:
        return complex(_einsum("xyzijab,xyzijab->", self.w, t) / self.mesh.nk**3)

    def denominator(self, eps: OrbitalEnergySet) -> np.ndarray:
        k1, k2, k3 = self.grid
        eo, ev_ = eps.occ, eps.vir
        return (eo[k1][..., :, None, None, None] + eo[k2][..., None, :, None, None]
                - ev_[k3][..., None, None, :, None] - ev_[self.k4][..., None, None, None, :])


# -- reduced backend -----------------------------------------------------------


class ReducedEngine:
    """FFT evaluation of ``A(T)`` for amplitudes of the form ``tau(ka - ki)``."""

    reduced = True

    def __init__(self, ev: EriEvaluator):
        if not ev.k_independent:
            raise ConfigError("the reduced backend needs k-independent orbitals")
        self.ev = ev
        self.mesh = ev.mesh
        self.minus = self.mesh.minus
        self.oovv = ev.q_kernel("oovv")
        self.vvoo = ev.q_kernel("vvoo")
        self.oooo = ev.q_kernel("oooo")
        self.vvvv = ev.q_kernel("vvvv")
        self.voov = ev.q_kernel("voov")
        self.vovo = ev.q_kernel("vovo")
        self.oovv_sum = self.oovv.sum(axis=0)
        self._vvvv_minus_hat = self._fft(self.vvvv[self.minus])
        self._oovv_hat = self._fft(self.oovv)
        self._oovv_minus_hat = self._fft(self.oovv[self.minus])

    def _fft(self, a):
        return np.fft.fftn(a.reshape(self.mesh.dims + a.shape[1:]), axes=(0, 1, 2))

    def _ifft(self, a):
        return np.fft.ifftn(a, axes=(0, 1, 2)).reshape((self.mesh.nk,) + a.shape[3:])

    def _conv(self, spec, f_hat, g):
        """``h(Q) = sum_r f(r) (x) g(Q - r)`` with ``(x)`` the orbital contraction ``spec``."""
        ins, out = spec.split("->")
        a, b = ins.split(",")
        return self._ifft(_einsum(f"xyz{a},xyz{b}->xyz{out}", f_hat, self._fft(g)))

    def constant(self) -> np.ndarray:
        return self.vvoo[self.minus].transpose(0, 3, 4, 1, 2)

    def intermediates(self, tau: np.ndarray) -> Intermediates:
        nk = self.mesh.nk
        ts = tau.sum(axis=0)
        vs = self.oovv_sum
        kappa_vv = -2.0 / nk * _einsum("sklcd,sklad->ac", self.oovv, tau) + _einsum("kldc,klad->ac", vs, ts) / nk**2
        kappa_oo = 2.0 / nk * _einsum("sklcd,silcd->ki", self.oovv, tau) - _einsum("kldc,ilcd->ki", vs, ts) / nk**2
        chi4 = self.oooo[self.minus] + self._conv("klcd,ijcd->klij", self._oovv_minus_hat, tau) / nk
        vm = self.oovv[self.minus]
        w1 = (self.voov[self.minus]
              + _einsum("qlkdc,qilad->qakic", vm, tau)
              - _einsum("lkcd,qilad->qakic", vs, tau) / (2 * nk)
              - _einsum("qlkdc,ilda->qakic", vm, ts) / (2 * nk))
        w2 = self.vovo - self._conv("lkcd,ilda->akci", self._oovv_hat, tau) / (2 * nk)
        return Intermediates(kappa_vv, kappa_oo, chi4, w1, w2, reduced=True)

    def contract(self, tau: np.ndarray) -> np.ndarray:
        nk = self.mesh.nk
        m = self.minus
        ts = tau.sum(axis=0)
        im = self.intermediates(tau)
        x_term = (_einsum("ac,qijcb->qijab", im.kappa_vv, tau)
                  - _einsum("ki,qkjab->qijab", im.kappa_oo, tau))
        hh = self._conv("klij,klab->ijab", self._fft(im.chi_oooo), tau) / nk
        pp = self._conv("abcd,ijcd->ijab", self._vvvv_minus_hat, tau) / nk
        w2_sum = im.chi_voov.sum(axis=0).swapaxes(-1, -2)
        ring = (_einsum("qakic,qkjcb->qijab", 2.0 * im.chi_ovvo_plus - w2_sum / nk, tau)
                - _einsum("qakic,kjbc->qijab", im.chi_ovvo_plus, ts) / nk
                - self._conv("akcj,kibc->ijab", self._fft(im.chi_voov), tau)[m] / nk)
        perm = x_term + ring
        return self.constant() + perm + perm[m].transpose(0, 2, 1, 4, 3) + hh + pp

    def energy(self, tau: np.ndarray) -> complex:
        nk = self.mesh.nk
        return complex(2.0 / nk * _einsum("qijab,qijab->", self.oovv, tau)
                       - _einsum("ijba,ijab->", self.oovv_sum, tau.sum(axis=0)) / nk**2)

    def denominator(self, eps: OrbitalEnergySet) -> np.ndarray:
        eo, ev_ = eps.occ, eps.vir
        if np.ptp(eps.eps, axis=0).max(initial=0.0) > 0:
            raise ConfigError("reduced backend needs k-independent orbital energies")
        eo, ev_ = eo[0], ev_[0]
        d = eo[:, None, None, None] + eo[None, :, None, None] - ev_[None, None, :, None] - ev_[None, None, None, :]
        return np.broadcast_to(d, (self.mesh.nk,) + d.shape)


_ENGINES: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def get_engine(ev: EriEvaluator, backend: str = "auto"):
    """Cached backend for ``ev``: ``'general'``, ``'reduced'`` or ``'auto'`` (reduced when possible)."""
    if backend == "auto":
        backend = "reduced" if ev.k_independent else "general"
    if backend not in ("general", "reduced"):
        raise ConfigError(f"unknown backend {backend!r}")
    cache = _ENGINES.setdefault(ev, {})
    if backend not in cache:
        cache[backend] = ReducedEngine(ev) if backend == "reduced" else GeneralEngine(ev)
    return cache[backend]


def _engine_for(t: AmplitudeTensor, ev: EriEvaluator):
    if not t.mesh.same_as(ev.mesh):
        raise MeshMismatchError(f"amplitudes live on mesh {t.mesh.dims}, ERIs on {ev.mesh.dims}")
    return get_engine(ev, "reduced" if t.reduced else "general")


# -- public operations ------------------------------------------------------------


def intermediates(t: AmplitudeTensor, ev: EriEvaluator) -> Intermediates:
    return _engine_for(t, ev).intermediates(t.data)


def contraction_map(t: AmplitudeTensor, ev: EriEvaluator, setting: CorrectionSetting = SETTINGS["none"],
                    xi: float = 0.0) -> AmplitudeTensor:
    """``A(T)``, or ``A(T) + 2 xi T`` when the contraction correction is on."""
    out = _engine_for(t, ev).contract(t.data)
    if setting.correct_contraction:
        out = out + 2.0 * xi * t.data
    return t.like(out)


def energy_of(t: AmplitudeTensor, ev: EriEvaluator) -> complex:
    """``(1/N_k^3) sum (2<ij|ab> - <ij|ba>) T``."""
    return _engine_for(t, ev).energy(t.data)


def denominator_tensor(eps: OrbitalEnergySet, ev: EriEvaluator, reduced: bool | None = None) -> np.ndarray:
    """``e_i + e_j - e_a - e_b`` in amplitude layout; raises if any entry is near zero."""
    if reduced is None:
        reduced = ev.k_independent
    d = get_engine(ev, "reduced" if reduced else "general").denominator(eps)
    small = np.abs(d).min()
    if small < DENOMINATOR_FLOOR:
        raise SingularDenominatorError(f"denominator {small:.2e} is below {DENOMINATOR_FLOOR}")
    return d


def denominator(eps: OrbitalEnergySet, i: int, j: int, a: int, b: int,
                ki: int, kj: int, ka: int, mesh: KMesh) -> float:
    """Single ``e_i(ki) + e_j(kj) - e_a(ka) - e_b(kb)`` with ``kb`` from conservation."""
    kb = mesh.kconserv[ki, kj, ka]
    d = float(eps.occ[ki, i] + eps.occ[kj, j] - eps.vir[ka, a] - eps.vir[kb, b])
    if abs(d) < DENOMINATOR_FLOOR:
        raise SingularDenominatorError(f"denominator {d:.2e} is below {DENOMINATOR_FLOOR}")
    return d


def _check_setting(eps: OrbitalEnergySet, setting: CorrectionSetting, xi: float):
    if eps.corrected != setting.correct_eps:
        raise ConfigError(f"setting {setting.name!r} does not match an energy set with corrected={eps.corrected}")
    if eps.corrected and eps.xi_used != xi:
        raise ConfigError("the energy correction and the contraction correction must share one xi")


def _check_finite(t: np.ndarray, step: int):
    if not np.all(np.isfinite(t)):
        raise DivergenceError(f"non-finite amplitudes at iteration {step}")
    size = np.abs(t).max(initial=0.0)
    if size > DIVERGENCE_NORM:
        raise DivergenceError(f"amplitudes reached {size:.2e} at iteration {step}")


def _start(ev, eps, setting, xi, backend):
    _check_setting(eps, setting, xi)
    engine = get_engine(ev, backend)
    d = denominator_tensor(eps, ev, engine.reduced)
    t = AmplitudeTensor.zeros(ev.mesh, ev.n_occ, ev.n_vir, engine.reduced)
    return engine, d, t


def _step(engine, t, d, setting, xi):
    a = engine.contract(t)
    if setting.correct_contraction:
        a = a + 2.0 * xi * t
    return a / d


def ccd_n(n: int, ev: EriEvaluator, eps: OrbitalEnergySet, setting: CorrectionSetting,
          xi: float = 0.0, backend: str = "auto"):
    """``n`` undamped steps ``T <- D^-1 A(T)`` from ``T = 0``; returns ``(T, report)``."""
    if n < 1:
        raise ConfigError("CCD(n) needs n >= 1")
    engine, d, t = _start(ev, eps, setting, xi, backend)
    tensor = t.data
    defect = 0.0
    residual = 0.0
    for step in range(1, n + 1):
        new = _step(engine, tensor, d, setting, xi)
        _check_finite(new, step)
        residual = float(np.abs(new - tensor).sum()) / (ev.nk if engine.reduced else ev.nk**3)
        tensor = new
        defect = max(defect, permutation_defect(t.like(tensor)))
    out = t.like(tensor)
    return out, SolverReport(n, residual, engine.energy(tensor), True, defect)


def ccd_converge(ev: EriEvaluator, eps: OrbitalEnergySet, setting: CorrectionSetting, xi: float = 0.0,
                 tol: float = 1e-9, max_iter: int = 200, damping: float = 1.0, backend: str = "auto"):
    """Damped fixed-point iteration until ``||D^-1 A(T) - T||_1 <= tol``.

    Hitting ``max_iter`` returns a report with ``converged=False``.
    """
    if tol <= 0:
        raise ConfigError("tol must be positive")
    if not 0.0 < damping <= 1.0:
        raise ConfigError("damping must lie in (0, 1]")
    engine, d, t = _start(ev, eps, setting, xi, backend)
    scale = ev.nk if engine.reduced else ev.nk**3
    tensor = t.data
    residual = np.inf
    defect = 0.0
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        target = _step(engine, tensor, d, setting, xi)
        _check_finite(target, iterations)
        residual = float(np.abs(target - tensor).sum()) / scale
        if residual <= tol:
            converged = True
            break
        tensor = (1.0 - damping) * tensor + damping * target
        defect = max(defect, permutation_defect(t.like(tensor)))
    return t.like(tensor), SolverReport(iterations, residual, engine.energy(tensor), converged, defect)


def mp2_energy(ev: EriEvaluator, eps: OrbitalEnergySet) -> complex:
    """Closed-form MP2 sum, written directly over mesh triples without intermediates."""
    nk = ev.nk
    kc = ev.mesh.kconserv
    total = 0.0 + 0.0j
    for ki in range(nk):
        for kj in range(nk):
            for ka in range(nk):
                kb = kc[ki, kj, ka]
                ijab = ev.block("oovv", ki, kj, ka)
                ijba = ev.block("oovv", ki, kj, kb)
                abij = ev.block("vvoo", ka, kb, ki)
                d = (eps.occ[ki][:, None, None, None] + eps.occ[kj][None, :, None, None]
                     - eps.vir[ka][None, None, :, None] - eps.vir[kb][None, None, None, :])
                t = abij.transpose(2, 3, 0, 1) / d
                total += np.sum((2.0 * ijab - ijba.transpose(0, 1, 3, 2)) * t)
    return total / nk**3


# -- dump format ----------------------------------------------------------------


def save_amplitudes(t: AmplitudeTensor, path) -> tuple:
    """Write ``<path>.bin`` (little-endian complex128, C order) and ``<path>.json`` (header).

    The binary always holds full storage in index order ``(ki, kj, ka, i, j, a, b)``.
    """
    path = Path(path)
    full = t.full().data
    bin_path = path.with_suffix(".bin")
    json_path = path.with_suffix(".json")
    full.astype("<c16").tofile(bin_path)
    header = {
        "dims": list(t.mesh.dims),
        "gamma_centered": t.mesh.gamma_centered,
        "n_occ": t.n_occ,
        "n_vir": t.n_vir,
        "index_order": ["ki", "kj", "ka", "i", "j", "a", "b"],
        "dtype": "<c16",
        "shape": list(full.shape),
    }
    json_path.write_text(json.dumps(header, indent=2) + "\n")
    return bin_path, json_path


def load_amplitudes(path, mesh: KMesh) -> AmplitudeTensor:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if tuple(header["dims"]) != mesh.dims:
        raise MeshMismatchError(f"dump was written on mesh {header['dims']}, not {mesh.dims}")
    data = np.fromfile(path.with_suffix(".bin"), dtype=header["dtype"]).reshape(header["shape"])
    return AmplitudeTensor(data.astype(complex), mesh)
