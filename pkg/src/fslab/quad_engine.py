"""Trapezoidal quadrature of periodic integrands with algebraic singularities.

Integrands are vectorized callables on arrays of cartesian points ``(N, 3)``.
The library builds gaussian-screened power profiles ``|x|^gamma exp(-sigma|x|^2)``
periodized over lattice images, smooth modulations, and the two-factor products
used by the product-rule error estimates.  ``lemma_series`` runs the error sweeps
behind the ``quadlab`` command.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import i0

from .errors import (
    ConfigError,
    DegenerateSeriesError,
    IntegrandDefectError,
    InvalidSpecError,
    OffMeshError,
)
from .lattice_mesh import KMesh, ReciprocalLattice, build_mesh, enumerate_shells

CHUNK = 1 << 15
IMAGE_TAIL = 1e-13
SCREEN_SIGMA = 12.0


@dataclass(frozen=True, eq=False)
class PeriodicIntegrand:
    """A periodic function with declared singular points ``((location, order), ...)``."""

    func: Callable[[np.ndarray], np.ndarray]
    period: ReciprocalLattice
    singular_points: tuple = ()
    value_at_singularity: complex = 0.0
    offset: complex = 0.0
    label: str = ""

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.func(x))


@dataclass(frozen=True)
class QuadratureResult:
    value: complex
    mesh_size: int
    n_points: int


@dataclass(frozen=True)
class ConvergenceSeries:
    entries: tuple

    def __post_init__(self):
        entries = tuple((int(m), float(e)) for m, e in self.entries)
        ms = [m for m, _ in entries]
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise DegenerateSeriesError("mesh sizes must be strictly increasing")
        object.__setattr__(self, "entries", entries)

    @property
    def m(self) -> np.ndarray:
        return np.array([m for m, _ in self.entries], dtype=float)

    @property
    def errors(self) -> np.ndarray:
        return np.array([e for _, e in self.entries])


def _same_period(a: ReciprocalLattice, b: ReciprocalLattice) -> bool:
    return np.allclose(a.vectors, b.vectors, rtol=0, atol=1e-14)


def _singular_indices(f: PeriodicIntegrand, mesh: KMesh) -> list:
    out = []
    for loc, _ in f.singular_points:
        try:
            out.append(int(mesh.index_of(np.asarray(loc, dtype=float))))
        except OffMeshError:
            pass
    return out


def trapezoid(f: PeriodicIntegrand, mesh: KMesh) -> QuadratureResult:
    """``(|V|/|X|) sum_x f(x)`` with on-mesh singular points set to ``value_at_singularity``."""
    if not _same_period(f.period, mesh.recip):
        raise ConfigError("mesh does not cover the integrand's period cell")
    pts = mesh.points
    special = set(_singular_indices(f, mesh))
    total = 0.0 + 0.0j
    for start in range(0, len(pts), CHUNK):
        stop = min(start + CHUNK, len(pts))
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.array(f(pts[start:stop]), dtype=complex)
        for idx in special:
            if start <= idx < stop:
                vals[idx - start] = f.value_at_singularity
        if not np.all(np.isfinite(vals)):
            raise IntegrandDefectError(f"integrand {f.label!r} is non-finite off its singular points")
        total += vals.sum()
    value = total * mesh.recip.bz_volume / mesh.nk + f.offset
    return QuadratureResult(complex(value), int(round(mesh.nk ** (1.0 / 3.0))), mesh.nk)


def quad_error(f: PeriodicIntegrand, mesh: KMesh, reference_integral: complex) -> float:
    return float(abs(reference_integral - trapezoid(f, mesh).value))


def subtract_singularity(f: PeriodicIntegrand, h: PeriodicIntegrand, integral_of_h: complex) -> PeriodicIntegrand:
    """``f - h`` carrying ``integral_of_h`` as an exact offset, so its trapezoid estimates ``int f``."""
    if not _same_period(f.period, h.period):
        raise ConfigError("subtracted function lives on a different period cell")
    return PeriodicIntegrand(
        lambda x: f(x) - h(x),
        f.period,
        f.singular_points,
        f.value_at_singularity - h.value_at_singularity,
        f.offset - h.offset + integral_of_h,
        f"({f.label})-({h.label})",
    )


def symmetrize(f: PeriodicIntegrand, order: int | None = None) -> PeriodicIntegrand:
    """``(f(x) + f(-x))/2``; ``order`` optionally re-declares the singularity order."""
    points = tuple((loc, order if order is not None else g) for loc, g in f.singular_points)
    return PeriodicIntegrand(
        lambda x: 0.5 * (f(x) + f(-x)),
        f.period,
        points,
        f.value_at_singularity,
        f.offset,
        f"sym({f.label})",
    )


def scaled(f: PeriodicIntegrand, c: complex) -> PeriodicIntegrand:
    return replace(f, func=lambda x: c * f(x), value_at_singularity=c * f.value_at_singularity,
                   offset=c * f.offset, label=f"{c}*{f.label}")


def product(f: PeriodicIntegrand, g: PeriodicIntegrand, label: str = "") -> PeriodicIntegrand:
    if not _same_period(f.period, g.period):
        raise ConfigError("factors live on different period cells")
    return PeriodicIntegrand(lambda x: f(x) * g(x), f.period,
                             f.singular_points + g.singular_points, 0.0, 0.0,
                             label or f"{f.label}*{g.label}")


# -- order estimation and slopes -------------------------------------------


def _fibonacci_directions(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def verify_order(f: PeriodicIntegrand, point, radii: Sequence[float], n_directions: int = 64) -> float:
    """Slope of ``log mean_u |f(point + r u)|`` against ``log r`` over the given radii."""
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0) or np.any(np.diff(radii) >= 0):
        raise ValueError("radii must be positive and strictly decreasing")
    dirs = _fibonacci_directions(n_directions)
    means = []
    for r in radii:
        vals = np.asarray(f(np.asarray(point, dtype=float) + r * dirs))
        if not np.all(np.isfinite(vals)):
            raise IntegrandDefectError(f"integrand {f.label!r} is non-finite near {point}")
        means.append(np.mean(np.abs(vals)))
    return float(np.polyfit(np.log(radii), np.log(means), 1)[0])


def fit_slope(series: ConvergenceSeries) -> float:
    """Least-squares slope of ``log(error)`` against ``log(m)``."""
    if len(series.entries) < 3:
        raise DegenerateSeriesError("slope estimation needs at least 3 entries")
    err = series.errors
    if np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise DegenerateSeriesError("errors must be positive and finite")
    return float(np.polyfit(np.log(series.m), np.log(err), 1)[0])


# -- integrand library -----------------------------------------------------


def _images(period: ReciprocalLattice, tail_radius: float) -> np.ndarray:
    half_diag = 0.5 * np.linalg.norm(period.vectors.sum(axis=0))
    half_diag = max(half_diag, 0.5 * np.abs(period.vectors).sum(axis=0).max())
    return enumerate_shells(period, tail_radius + half_diag).vectors


def _tail_radius(gamma: float, sigma: float, tol: float = IMAGE_TAIL) -> float:
    r = 1.0
    while r**gamma * np.exp(-sigma * r * r) > tol:
        r *= 1.05
    return r


def _periodize(profile: Callable, period: ReciprocalLattice, tail_radius: float) -> Callable:
    images = _images(period, tail_radius)

    def func(x):
        out = np.zeros(len(x), dtype=complex)
        for n in images:
            y = x + n
            r = np.sqrt(np.einsum("ij,ij->i", y, y))
            near = r < tail_radius
            if np.any(near):
                out[near] += profile(y[near], r[near])
        return out

    return func


def screened_power(gamma: int, sigma: float = SCREEN_SIGMA,
                   period: ReciprocalLattice | None = None) -> PeriodicIntegrand:
    """Periodized ``|x|^gamma exp(-sigma |x|^2)``: order ``gamma`` at the lattice points."""
    period = period or ReciprocalLattice.unit_cube()
    func = _periodize(lambda y, r: r**gamma * np.exp(-sigma * r * r), period,
                      _tail_radius(gamma, sigma))
    return PeriodicIntegrand(func, period, ((np.zeros(3), int(gamma)),), label=f"screened|x|^{gamma}")


def screened_power_integral(gamma: float, sigma: float = SCREEN_SIGMA) -> float:
    """Integral over the period cell, which unfolds to ``int_{R^3} |x|^gamma exp(-sigma|x|^2)``."""
    return float(2.0 * np.pi * gamma_fn((gamma + 3.0) / 2.0) * sigma ** (-(gamma + 3.0) / 2.0))


def _fractional(period: ReciprocalLattice, x: np.ndarray) -> np.ndarray:
    return x @ period.inverse


SMOOTH_AMPLITUDES = (0.7, 0.4, 0.3)
SMOOTH_PHASES = (0.0, 0.3, -1.1)


def smooth_integrand(period: ReciprocalLattice | None = None) -> PeriodicIntegrand:
    """``exp(sum_d a_d cos(2 pi x_d + phi_d))`` in fractional coordinates; analytic integral."""
    period = period or ReciprocalLattice.unit_cube()
    a = np.array(SMOOTH_AMPLITUDES)
    ph = np.array(SMOOTH_PHASES)

    def func(x):
        u = _fractional(period, x)
        return np.exp(np.cos(2 * np.pi * u + ph) @ a)

    return PeriodicIntegrand(func, period, label="smooth")


def smooth_integral(period: ReciprocalLattice | None = None) -> float:
    period = period or ReciprocalLattice.unit_cube()
    return float(period.bz_volume * np.prod(i0(np.array(SMOOTH_AMPLITUDES))))


def modulation(period: ReciprocalLattice | None = None) -> PeriodicIntegrand:
    """Smooth periodic factor with both even and odd parts; equals 1.3 at the origin."""
    period = period or ReciprocalLattice.unit_cube()

    def func(x):
        u = 2 * np.pi * _fractional(period, x)
        return (1.0 + 0.3 * np.cos(u[:, 0]) + 0.2 * np.sin(u[:, 1])
                + 0.1 * np.sin(u[:, 0] + u[:, 2]) + 0.05 * np.cos(u[:, 1] - u[:, 2]) - 0.05)

    return PeriodicIntegrand(func, period, label="g")


def eri_like(period: ReciprocalLattice | None = None, sigma: float = SCREEN_SIGMA) -> PeriodicIntegrand:
    """Linear-plus-quadratic numerator over a screened ``|x|^2``: order -1, order 0 once symmetrized."""
    period = period or ReciprocalLattice.unit_cube()
    h = screened_power(-2, sigma, period)

    def func(x):
        u = 2 * np.pi * _fractional(period, x)
        return (np.sin(u[:, 0]) + 0.5 * np.sin(u[:, 2]) + (1.0 - np.cos(u[:, 1]))) * h(x)

    return PeriodicIntegrand(func, period, ((np.zeros(3), -1),), label="eri-like")


def _vanishing_factor(s: int, period: ReciprocalLattice) -> Callable:
    if s == 0:
        def p(x):
            u = 2 * np.pi * _fractional(period, x)
            return np.sin(u[:, 0]) + 0.5 * np.sin(u[:, 2]) + (1.0 - np.cos(u[:, 1]))
    elif s == 1:
        def p(x):
            u = 2 * np.pi * _fractional(period, x)
            return ((1.0 - np.cos(u[:, 0])) + 0.5 * (1.0 - np.cos(u[:, 1]))
                    + 0.25 * (1.0 - np.cos(u[:, 2])) + 0.3 * np.sin(u[:, 0]) * np.sin(u[:, 1]))
    else:
        raise InvalidSpecError(f"no vanishing factor of order {s}")
    return p


def directional_bump(z: np.ndarray, sigma: float = SCREEN_SIGMA,
                     period: ReciprocalLattice | None = None) -> PeriodicIntegrand:
    """Bounded, direction-dependent ``y_1^2/|y|^2`` bump at ``z``: an order-0 singularity."""
    period = period or ReciprocalLattice.unit_cube()
    z = np.asarray(z, dtype=float)
    bump = _periodize(lambda y, r: (y[:, 0] ** 2 + 0.5 * y[:, 0] * y[:, 1]) / (r * r) * np.exp(-sigma * r * r),
                      period, _tail_radius(0, sigma))
    return PeriodicIntegrand(lambda x: bump(x - z), period, ((z, 0),), label="bump")


def make_singular_product(gamma: int, s: int, z2, sigma: float = SCREEN_SIGMA,
                          bump_weight: float = 1.0,
                          period: ReciprocalLattice | None = None) -> PeriodicIntegrand:
    """``f1 f2`` with ``f1`` of order ``gamma`` at 0 and ``f2`` of order 0 at ``z2``, flat to order ``s`` at 0."""
    period = period or ReciprocalLattice.unit_cube()
    z2 = np.asarray(z2, dtype=float)
    frac = _fractional(period, z2)
    if gamma not in (-2, -1):
        raise InvalidSpecError(f"gamma must be -2 or -1, got {gamma}")
    if s < 0 or gamma + s + 1 > 0:
        raise InvalidSpecError(f"need gamma + s + 1 <= 0, got gamma={gamma}, s={s}")
    if np.allclose(frac - np.rint(frac), 0.0, atol=1e-12):
        raise InvalidSpecError("z2 must differ from the origin modulo the period lattice")
    f1 = screened_power(gamma, sigma, period)
    p = _vanishing_factor(s, period)
    bump = directional_bump(z2, sigma, period)

    def func(x):
        # the constant keeps f1 = O(1) at z2 so the z2 singularity is not screened away
        return (f1(x) + 1.0) * p(x) * (1.0 + bump_weight * bump(x))

    return PeriodicIntegrand(func, period, ((np.zeros(3), gamma), (z2, 0)),
                             label=f"product(gamma={gamma},s={s})")


# -- lemma sweeps ----------------------------------------------------------


def unit_mesh(m: int) -> KMesh:
    return build_mesh(ReciprocalLattice.unit_cube(), (m, m, m))


@dataclass(frozen=True)
class LemmaRun:
    lemma_id: str
    gamma: int
    s: int
    series: ConvergenceSeries
    slope: float
    reference: complex = field(default=0.0)


def _bare(gamma: int):
    f1 = screened_power(gamma)
    g = modulation()
    f = product(f1, g, f"bare(gamma={gamma})")
    g0 = complex(g(np.zeros((1, 3)))[0])
    return f, f1, g0


DEFAULT_Z2 = (0.5, 0.5, 0.0)


def lemma_integrand(lemma_id: str, gamma: int = -2, s: int = 1, z2=DEFAULT_Z2):
    """Return ``(integrand, reference_integrand, exact_offset)`` for a lemma sweep.

    The reference integrand is evaluated on a fine mesh and ``exact_offset`` is
    added, which is the singularity subtraction applied to the reference.
    """
    if lemma_id == "quaderror0":
        f = smooth_integrand()
        return f, None, smooth_integral()
    if lemma_id == "quaderror1":
        f, f1, g0 = _bare(gamma)
        ref = subtract_singularity(f, scaled(f1, g0), g0 * screened_power_integral(gamma))
        return f, ref, None
    if lemma_id == "quaderror1_sub":
        f, f1, g0 = _bare(gamma)
        sub = symmetrize(subtract_singularity(f, scaled(f1, g0), g0 * screened_power_integral(gamma)), 0)
        return sub, sub, None
    if lemma_id == "quaderror2":
        f1 = screened_power(gamma)
        f2 = directional_bump(np.asarray(z2, dtype=float))
        g = PeriodicIntegrand(lambda x: 1.0 + f2(x), f1.period, f2.singular_points)
        f = product(f1, g, f"quaderror2(gamma={gamma})")
        ref = subtract_singularity(f, f1, screened_power_integral(gamma))
        return f, ref, None
    if lemma_id == "quaderror2_2":
        f = make_singular_product(gamma, s, z2)
        return f, f, None
    raise InvalidSpecError(f"unknown lemma id {lemma_id!r}")


def lemma_series(lemma_id: str, ms: Sequence[int] = (6, 8, 12, 16), gamma: int = -2, s: int = 1,
                 z2=DEFAULT_Z2, reference_factor: int = 4) -> LemmaRun:
    """Quadrature errors of a lemma integrand against a fine-mesh (or analytic) reference."""
    f, ref_f, exact = lemma_integrand(lemma_id, gamma, s, z2)
    if ref_f is None:
        reference = complex(exact)
    else:
        reference = trapezoid(ref_f, unit_mesh(reference_factor * max(ms))).value
    entries = [(m, quad_error(f, unit_mesh(m), reference)) for m in ms]
    series = ConvergenceSeries(tuple(entries))
    slope = fit_slope(series) if all(e > 0 for _, e in entries) else float("nan")
    return LemmaRun(lemma_id, gamma, s, series, slope, reference)
