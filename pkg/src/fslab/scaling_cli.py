"""Mesh sweeps, power-law fits, exponent discrimination and the ``fslab`` command line.

Experiments are described by an INI file read with :mod:`configparser`::

    [model]
    preset = insulator-2x2        ; or insulator-AxB-dispersive
    eri_scale = 1.0

    [mesh]
    dims = 2, 3, 4, 5             ; Gamma-centred cubic meshes n x n x n
    tdl_proxy_dims = 8

    [settings]
    names = none, eps, contraction, both

    [solver]
    modes = ccd_n:2, ccd_n:3, converge
    tol = 1e-9
    max_iter = 200
    damping = 1.0
    backend = auto

    [madelung]
    sigma =                       ; empty selects the default width
    tail_tol = 1e-13

    [quadlab]
    lemmas = quaderror0, quaderror1, quaderror1_sub, quaderror2, quaderror2_2
    ms = 6, 8, 12, 16

    [output]
    csv = results.csv
    json = summary.json
    memory_limit_gb = 2

All quantities are in atomic units.  Relative output paths resolve against the
directory of the config file.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from . import quad_engine
from .ccd_engine import SETTINGS, CorrectionSetting, ccd_converge, ccd_n
from .errors import ConfigError, DegenerateSeriesError, DivergenceError, FslabError, ResourceError
from .lattice_mesh import build_mesh, reciprocal_of
from .madelung import EwaldSpec, madelung_constant
from .model_system import EriEvaluator, orbital_energies, preset_model, solve_bands

CSV_COLUMNS = ("dims", "N_k", "setting_eps", "setting_contraction", "solver_mode", "n",
               "energy", "converged", "residual")
QUAD_COLUMNS = ("lemma_id", "gamma", "s", "m", "abs_error", "fitted_slope")
ALPHA_BOUNDS = (0.1, 2.0)
INDETERMINATE_FLOOR = 1e-12

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class SolverMode:
    """``ccd_n`` with an order ``n``, or ``converge``."""

    kind: str
    n: int | None = None

    @property
    def label(self) -> str:
        return f"ccd_n({self.n})" if self.kind == "ccd_n" else "converge"

    @classmethod
    def parse(cls, text: str) -> "SolverMode":
        text = text.strip()
        if text == "converge":
            return cls("converge")
        kind, _, n = text.partition(":")
        if kind != "ccd_n" or not n.strip().isdigit() or int(n) < 1:
            raise ConfigError(f"solver mode {text!r} must be 'converge' or 'ccd_n:<n>' with n >= 1")
        return cls("ccd_n", int(n))


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "insulator-2x2"
    eri_scale: float = 1.0
    dims: tuple = (2, 3, 4, 5)
    tdl_proxy_dims: int = 8
    settings: tuple = tuple(SETTINGS.values())
    modes: tuple = (SolverMode("ccd_n", 2),)
    tol: float = 1e-9
    max_iter: int = 200
    damping: float = 1.0
    backend: str = "auto"
    sigma: float | None = None
    tail_tol: float = 1e-13
    lemmas: tuple = ("quaderror0", "quaderror1", "quaderror1_sub", "quaderror2", "quaderror2_2")
    ms: tuple = (6, 8, 12, 16)
    csv_path: Path = Path("results.csv")
    json_path: Path = Path("summary.json")
    memory_limit_gb: float = 2.0

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if not dims or any(n < 1 for n in dims) or any(b <= a for a, b in zip(dims, dims[1:])):
            raise ConfigError(f"mesh dims must be positive and strictly increasing, got {dims}")
        object.__setattr__(self, "dims", dims)
        if not self.settings:
            raise ConfigError("at least one correction setting is required")
        if not self.modes:
            raise ConfigError("at least one solver mode is required")
        if self.tdl_proxy_dims <= max(dims) and self.tdl_proxy_dims != 0:
            raise ConfigError(f"tdl_proxy_dims={self.tdl_proxy_dims} must exceed the largest mesh")
        if self.tol <= 0 or self.max_iter < 1 or not 0 < self.damping <= 1:
            raise ConfigError("solver needs tol > 0, max_iter >= 1 and damping in (0, 1]")
        if self.eri_scale <= 0:
            raise ConfigError("eri_scale must be positive")
        if self.backend not in ("auto", "general", "reduced"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        preset_model(self.preset)


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> list:
    return [int(v) for v in text.replace(",", " ").split()]


def _names(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def load_config(path) -> ExperimentConfig:
    """Parse an INI experiment file; every failure surfaces as :class:`ConfigError`."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    base = path.parent
    get = lambda sec, key, default: parser.get(sec, key, fallback=default)
    try:
        sigma_text = get("madelung", "sigma", "").strip()
        settings = tuple(CorrectionSetting.named(n) for n in _names(get("settings", "names", "none, eps, contraction, both")))
        modes = tuple(SolverMode.parse(m) for m in _names(get("solver", "modes", "ccd_n:2")))
        return ExperimentConfig(
            preset=get("model", "preset", "insulator-2x2").strip(),
            eri_scale=float(get("model", "eri_scale", "1.0")),
            dims=tuple(_ints(get("mesh", "dims", "2, 3, 4, 5"))),
            tdl_proxy_dims=int(get("mesh", "tdl_proxy_dims", "8")),
            settings=settings,
            modes=modes,
            tol=float(get("solver", "tol", "1e-9")),
            max_iter=int(get("solver", "max_iter", "200")),
            damping=float(get("solver", "damping", "1.0")),
            backend=get("solver", "backend", "auto").strip(),
            sigma=float(sigma_text) if sigma_text else None,
            tail_tol=float(get("madelung", "tail_tol", "1e-13")),
            lemmas=tuple(_names(get("quadlab", "lemmas", "quaderror0, quaderror1, quaderror1_sub, quaderror2, quaderror2_2"))),
            ms=tuple(_ints(get("quadlab", "ms", "6, 8, 12, 16"))),
            csv_path=base / get("output", "csv", "results.csv").strip(),
            json_path=base / get("output", "json", "summary.json").strip(),
            memory_limit_gb=float(get("output", "memory_limit_gb", "2")),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value in {path}: {exc}") from exc


# -- fits -------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingSeries:
    """``(N_k, energy)`` pairs with distinct, increasing ``N_k``."""

    nk: np.ndarray
    energy: np.ndarray
    setting: CorrectionSetting | None = None
    mode: str = ""

    def __post_init__(self):
        nk = np.asarray(self.nk, dtype=float)
        e = np.asarray(self.energy, dtype=float)
        if nk.shape != e.shape or nk.ndim != 1:
            raise DegenerateSeriesError("N_k and energy must be 1D arrays of equal length")
        if np.any(np.diff(nk) <= 0) and len(np.unique(nk)) > 1:
            raise DegenerateSeriesError("N_k values must be distinct and increasing")
        object.__setattr__(self, "nk", nk)
        object.__setattr__(self, "energy", e)

    def __len__(self) -> int:
        return len(self.nk)

    def drop_last(self) -> "ScalingSeries":
        return ScalingSeries(self.nk[:-1], self.energy[:-1], self.setting, self.mode)


@dataclass(frozen=True)
class PowerLawFit:
    """``E(N_k) = C0 + C1 N_k^(-alpha)``."""

    c0: float
    c1: float
    alpha: float
    rms_residual: float
    alpha_fixed: bool = True

    def __call__(self, nk):
        return self.c0 + self.c1 * np.asarray(nk, dtype=float) ** (-self.alpha)


def _linear_fit(nk, e, alpha, c0):
    x = nk ** (-alpha)
    if c0 is None:
        design = np.stack([np.ones_like(x), x], axis=1)
        if np.linalg.matrix_rank(design) < 2:
            raise DegenerateSeriesError("all N_k are equal; the power law is not identifiable")
        (a, b), *_ = np.linalg.lstsq(design, e, rcond=None)
    else:
        a = float(c0)
        b = float(np.dot(x, e - a) / np.dot(x, x))
    rms = float(np.sqrt(np.mean((a + b * x - e) ** 2)))
    return float(a), float(b), rms


def fit_power_law(series: ScalingSeries, alpha: float | None = None, c0: float | None = None) -> PowerLawFit:
    """Least-squares power law; a free ``alpha`` is optimized over ``[0.1, 2]`` around the linear solve."""
    n_needed = 3 if alpha is not None else 4
    if len(series) < n_needed:
        raise DegenerateSeriesError(f"need at least {n_needed} points, got {len(series)}")
    if len(np.unique(series.nk)) < 2:
        raise DegenerateSeriesError("all N_k are equal; the power law is not identifiable")
    nk, e = series.nk, series.energy
    if alpha is not None:
        a, b, rms = _linear_fit(nk, e, float(alpha), c0)
        return PowerLawFit(a, b, float(alpha), rms, True)
    best = minimize_scalar(lambda al: _linear_fit(nk, e, al, c0)[2], bounds=ALPHA_BOUNDS,
                           method="bounded", options={"xatol": 1e-12})
    al = float(best.x)
    a, b, rms = _linear_fit(nk, e, al, c0)
    return PowerLawFit(a, b, al, rms, False)


@dataclass(frozen=True)
class Verdict:
    better: str
    residual_ratio: float
    rms_one_third: float
    rms_one: float


def discriminate_exponent(series: ScalingSeries, tdl_ref: float) -> Verdict:
    """Compare ``|E - E_ref| = C1 N_k^-1/3`` against ``C1 N_k^-1`` on a log scale.

    ``C0`` is pinned to the reference, so each fit has a single free amplitude.
    """
    if len(series) < 4:
        raise DegenerateSeriesError("exponent discrimination needs at least 4 points")
    err = np.abs(series.energy - tdl_ref)
    if np.any(err < INDETERMINATE_FLOOR):
        return Verdict("indeterminate", float("nan"), float("nan"), float("nan"))
    y = np.log(err)
    x = np.log(series.nk)
    rms = {}
    for alpha in (1.0 / 3.0, 1.0):
        r = y + alpha * x
        rms[alpha] = float(np.sqrt(np.mean((r - r.mean()) ** 2)))
    third, one = rms[1.0 / 3.0], rms[1.0]
    if one < third:
        return Verdict("one", third / max(one, 1e-300), third, one)
    return Verdict("one-third", one / max(third, 1e-300), third, one)


# -- experiments -------------------------------------------------------------------


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    diverged: bool = False


@dataclass
class _MeshContext:
    dims: tuple
    ev: EriEvaluator
    xi: float
    eps_plain: object
    eps_corrected: object


def estimate_memory(config: ExperimentConfig, n: int) -> float:
    """Bytes needed for ERI kernels and amplitudes on an ``n^3`` mesh."""
    model = preset_model(config.preset)
    nk = n**3
    nb = model.basis.size
    no, nv = model.n_occ, model.n_vir
    kernel = 16.0 * nk * nb**4 * 2
    if model.is_flat and config.backend != "general":
        amps = 16.0 * nk * (no + nv) ** 4 * 12
    else:
        amps = 16.0 * nk**3 * (no + nv) ** 4 * 12
    return kernel + amps


def _context(config: ExperimentConfig, n: int) -> _MeshContext:
    need = estimate_memory(config, n)
    if need > config.memory_limit_gb * 2**30:
        raise ResourceError(f"mesh {n}^3 needs about {need / 2**30:.2f} GiB, above the "
                            f"{config.memory_limit_gb} GiB bound")
    model = preset_model(config.preset)
    mesh = build_mesh(reciprocal_of(model.cell), (n, n, n))
    ev = EriEvaluator(solve_bands(model, mesh), eri_scale=config.eri_scale)
    spec = EwaldSpec(model.cell, mesh, config.sigma, tail_tol=config.tail_tol)
    xi = madelung_constant(spec).xi
    plain = orbital_energies(ev)
    return _MeshContext((n, n, n), ev, xi, plain, plain.with_correction(xi))


def _solve(ctx: _MeshContext, setting: CorrectionSetting, mode: SolverMode, config: ExperimentConfig) -> dict:
    eps = ctx.eps_corrected if setting.correct_eps else ctx.eps_plain
    if mode.kind == "ccd_n":
        _, rep = ccd_n(mode.n, ctx.ev, eps, setting, ctx.xi, backend=config.backend)
    else:
        _, rep = ccd_converge(ctx.ev, eps, setting, ctx.xi, tol=config.tol, max_iter=config.max_iter,
                              damping=config.damping, backend=config.backend)
    if abs(rep.energy.imag) > 1e-10:
        raise ArithmeticError(f"correlation energy has imaginary part {rep.energy.imag:.2e}")
    return {"energy": rep.energy.real, "converged": rep.converged, "residual": rep.residual_1norm}


def _row(dims, setting, mode, outcome) -> dict:
    return {
        "dims": "x".join(str(d) for d in dims),
        "N_k": int(np.prod(dims)),
        "setting_eps": setting.correct_eps,
        "setting_contraction": setting.correct_contraction,
        "solver_mode": mode.kind,
        "n": "" if mode.n is None else mode.n,
        "energy": outcome["energy"],
        "converged": outcome["converged"],
        "residual": outcome["residual"],
    }


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Sweep meshes and settings, then fit and classify each ``(setting, mode)`` series.

    A diverging solver is recorded as a failed row and the sweep continues.
    """
    result = ExperimentResult()
    energies = {}
    for n in config.dims:
        ctx = _context(config, n)
        for setting in config.settings:
            for mode in config.modes:
                try:
                    outcome = _solve(ctx, setting, mode, config)
                except DivergenceError:
                    outcome = {"energy": float("nan"), "converged": False, "residual": float("nan")}
                    result.diverged = True
                result.rows.append(_row(ctx.dims, setting, mode, outcome))
                energies[(setting.name, mode.label, n)] = outcome["energy"]

    proxies = {}
    if config.tdl_proxy_dims:
        ctx = _context(config, config.tdl_proxy_dims)
        for mode in config.modes:
            try:
                proxies[mode.label] = _solve(ctx, SETTINGS["both"], mode, config)["energy"]
            except DivergenceError:
                result.diverged = True

    summary = {"preset": config.preset, "dims": list(config.dims), "tdl_proxy_dims": config.tdl_proxy_dims,
               "proxy_energy": proxies, "series": []}
    nk = np.array([n**3 for n in config.dims], dtype=float)
    for setting in config.settings:
        for mode in config.modes:
            e = np.array([energies[(setting.name, mode.label, n)] for n in config.dims])
            entry = {"setting": setting.name, "solver_mode": mode.label}
            if np.all(np.isfinite(e)):
                series = ScalingSeries(nk, e, setting, mode.label)
                entry["fit"] = _fit_dict(series)
                ref = proxies.get(mode.label)
                if ref is not None and len(series) >= 4:
                    v = discriminate_exponent(series, ref)
                    entry["verdict"] = v.better
                    entry["residual_ratio"] = v.residual_ratio
                else:
                    entry["verdict"] = "indeterminate"
            else:
                entry["verdict"] = "failed"
            summary["series"].append(entry)
    result.summary = summary
    if write:
        emit_report(result, config.csv_path, config.json_path)
    return result


def _fit_dict(series: ScalingSeries) -> dict:
    out = {}
    for key, alpha in (("one_third", 1.0 / 3.0), ("one", 1.0), ("free", None)):
        try:
            fit = fit_power_law(series, alpha)
        except DegenerateSeriesError:
            continue
        out[key] = {"C0": fit.c0, "C1": fit.c1, "alpha": fit.alpha, "rms_residual": fit.rms_residual}
    return out


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_format(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_csv_rows(path) -> list:
    """Parse a run CSV back into typed rows."""
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            rows.append({
                "dims": raw["dims"],
                "N_k": int(raw["N_k"]),
                "setting_eps": raw["setting_eps"] == "true",
                "setting_contraction": raw["setting_contraction"] == "true",
                "solver_mode": raw["solver_mode"],
                "n": int(raw["n"]) if raw["n"] else "",
                "energy": float(raw["energy"]),
                "converged": raw["converged"] == "true",
                "residual": float(raw["residual"]),
            })
    return rows


def emit_report(result: ExperimentResult, csv_path, json_path=None):
    """Write the CSV rows and, when a path is given, the JSON summary."""
    if not result.rows:
        raise ConfigError("no results to report")
    Path(csv_path).write_text(rows_to_csv(result.rows))
    if json_path is not None:
        Path(json_path).write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")


# -- auxiliary commands -------------------------------------------------------------


def madelung_table(config: ExperimentConfig) -> list:
    model = preset_model(config.preset)
    rows = []
    for n in config.dims:
        mesh = build_mesh(reciprocal_of(model.cell), (n, n, n))
        res = madelung_constant(EwaldSpec(model.cell, mesh, config.sigma, tail_tol=config.tail_tol))
        rows.append({"dims": f"{n}x{n}x{n}", "N_k": n**3, "sigma": res.sigma_used, "xi": res.xi,
                     "xi_times_cbrt_nk": res.xi * n})
    return rows


def quadlab_rows(config: ExperimentConfig) -> list:
    rows = []
    for lemma in config.lemmas:
        cases = [(-2, 1), (-1, 0)] if lemma == "quaderror2_2" else [(-2, 1)]
        if lemma == "quaderror1":
            cases = [(-2, 1), (-1, 1)]
        for gamma, s in cases:
            run = quad_engine.lemma_series(lemma, ms=config.ms, gamma=gamma, s=s)
            for m, err in run.series.entries:
                rows.append({"lemma_id": lemma, "gamma": gamma, "s": s, "m": m, "abs_error": err,
                             "fitted_slope": run.slope})
    return rows


def _dict_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format(row[c]) for c in columns])
    return buf.getvalue()


def fit_csv(path, alpha: str = "free") -> list:
    """Fit every ``(setting, mode, n)`` group of a run CSV."""
    rows = read_csv_rows(path)
    if alpha == "free":
        al = None
    else:
        try:
            al = float(alpha)
        except ValueError:
            raise ConfigError(f"alpha must be 'free' or a number, got {alpha!r}") from None
        if np.isclose(al, 0.333, atol=5e-4):
            al = 1.0 / 3.0
    groups = {}
    for row in rows:
        key = (row["setting_eps"], row["setting_contraction"], row["solver_mode"], row["n"])
        groups.setdefault(key, []).append((row["N_k"], row["energy"]))
    out = []
    for (ce, cc, mode, n), pts in groups.items():
        pts.sort()
        series = ScalingSeries([p[0] for p in pts], [p[1] for p in pts])
        fit = fit_power_law(series, al)
        out.append({"setting": CorrectionSetting(ce, cc).name, "solver_mode": mode, "n": n,
                    "C0": fit.c0, "C1": fit.c1, "alpha": fit.alpha, "rms_residual": fit.rms_residual})
    return out


# -- entry point -----------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fslab", description="Finite-size scaling laboratory for periodic CCD.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="sweep meshes and correction settings")
    run.add_argument("config")
    mad = sub.add_parser("madelung", help="tabulate the Madelung constant over the configured meshes")
    mad.add_argument("config")
    quad = sub.add_parser("quadlab", help="quadrature-error sweeps for the singular integrand library")
    quad.add_argument("config")
    quad.add_argument("--out", help="CSV path (default: stdout)")
    fit = sub.add_parser("fit", help="power-law fits of a run CSV")
    fit.add_argument("csv")
    fit.add_argument("--alpha", default="free", help="'free', 0.333 or 1")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            result = run_experiment(config)
            print(json.dumps(result.summary, indent=2, sort_keys=True))
            return EXIT_DIVERGED if result.diverged else EXIT_OK
        if args.command == "madelung":
            config = load_config(args.config)
            sys.stdout.write(_dict_csv(madelung_table(config), ("dims", "N_k", "sigma", "xi", "xi_times_cbrt_nk")))
            return EXIT_OK
        if args.command == "quadlab":
            config = load_config(args.config)
            text = _dict_csv(quadlab_rows(config), QUAD_COLUMNS)
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        if args.command == "fit":
            print(json.dumps(fit_csv(args.csv, args.alpha), indent=2))
            return EXIT_OK
    except (ConfigError, ResourceError, DegenerateSeriesError) as exc:
        print(f"fslab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"fslab: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FslabError as exc:
        print(f"fslab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
