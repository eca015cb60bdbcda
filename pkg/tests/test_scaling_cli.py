import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fslab.ccd_engine import SETTINGS, ccd_n
from fslab.errors import ConfigError, DegenerateSeriesError, ResourceError
from fslab.scaling_cli import (
    CSV_COLUMNS,
    QUAD_COLUMNS,
    ExperimentConfig,
    ExperimentResult,
    ScalingSeries,
    SolverMode,
    discriminate_exponent,
    emit_report,
    fit_csv,
    fit_power_law,
    load_config,
    main,
    read_csv_rows,
    rows_to_csv,
    run_experiment,
)

NK = np.array([8.0, 27.0, 64.0, 125.0, 216.0])

SMALL = """
[model]
preset = insulator-1x1
eri_scale = {scale}

[mesh]
dims = 1, 2
tdl_proxy_dims = 0

[settings]
names = none, both

[solver]
modes = ccd_n:1, converge
tol = 1e-9

[quadlab]
lemmas = quaderror0, quaderror1
ms = 4, 6, 8

[output]
csv = out.csv
json = out.json
memory_limit_gb = {limit}
"""


def write_config(tmp_path, scale=1.0, limit=2, text=SMALL):
    path = tmp_path / "exp.ini"
    path.write_text(text.format(scale=scale, limit=limit))
    return path


def test_fixed_alpha_fit_is_exact():
    fit = fit_power_law(ScalingSeries(NK, 1.0 + 2.0 / NK), alpha=1.0)
    np.testing.assert_allclose([fit.c0, fit.c1], [1.0, 2.0], atol=1e-10)
    assert fit.rms_residual < 1e-13 and fit.alpha_fixed
    np.testing.assert_allclose(fit(NK), 1.0 + 2.0 / NK, atol=1e-12)


def test_wrong_exponent_fits_badly():
    series = ScalingSeries(NK, 1.0 + 2.0 / NK)
    good = fit_power_law(series, alpha=1.0)
    bad = fit_power_law(series, alpha=1.0 / 3.0)
    assert bad.rms_residual > 100 * max(good.rms_residual, 1e-14)


@pytest.mark.parametrize("alpha", [1.0 / 3.0, 0.5, 1.0, 1.5])
def test_free_alpha_recovered(alpha):
    fit = fit_power_law(ScalingSeries(NK, -0.3 + 0.7 * NK**-alpha))
    np.testing.assert_allclose(fit.alpha, alpha, atol=1e-5)
    np.testing.assert_allclose(fit.c0, -0.3, atol=1e-6)
    assert not fit.alpha_fixed


def test_pinned_intercept():
    fit = fit_power_law(ScalingSeries(NK, 1.0 + 2.0 / NK), alpha=1.0, c0=1.0)
    np.testing.assert_allclose(fit.c1, 2.0, rtol=1e-12)


def test_fit_needs_enough_points():
    with pytest.raises(DegenerateSeriesError):
        fit_power_law(ScalingSeries(NK[:2], NK[:2]), alpha=1.0)
    with pytest.raises(DegenerateSeriesError):
        fit_power_law(ScalingSeries(NK[:3], NK[:3]))
    with pytest.raises(DegenerateSeriesError):
        fit_power_law(ScalingSeries(np.full(4, 8.0), np.arange(4.0)), alpha=1.0)
    with pytest.raises(DegenerateSeriesError):
        ScalingSeries(NK[::-1], NK)


def test_discrimination_synthetic():
    third = discriminate_exponent(ScalingSeries(NK, 0.1 + 0.02 * NK ** (-1 / 3)), 0.1)
    one = discriminate_exponent(ScalingSeries(NK, 0.1 + 0.02 / NK), 0.1)
    assert third.better == "one-third" and third.residual_ratio > 100
    assert one.better == "one" and one.residual_ratio > 100
    assert discriminate_exponent(ScalingSeries(NK, np.full(5, 0.1)), 0.1).better == "indeterminate"
    with pytest.raises(DegenerateSeriesError):
        discriminate_exponent(ScalingSeries(NK[:3], NK[:3]), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(1e-3, 1.0), st.sampled_from([1.0 / 3.0, 1.0]),
       st.booleans(), st.integers(0, 2**31))
def test_discrimination_verdict_stable(c0, c1, alpha, negative, seed):
    rng = np.random.default_rng(seed)
    sign = -1.0 if negative else 1.0
    e = c0 + sign * c1 * NK**-alpha * (1 + 0.01 * rng.standard_normal(len(NK)))
    series = ScalingSeries(NK, e)
    expected = "one" if alpha == 1.0 else "one-third"
    assert discriminate_exponent(series, c0).better == expected
    assert discriminate_exponent(series.drop_last(), c0).better == expected


def test_solver_mode_parse():
    assert SolverMode.parse("ccd_n:3") == SolverMode("ccd_n", 3)
    assert SolverMode.parse(" converge ").label == "converge"
    assert SolverMode("ccd_n", 2).label == "ccd_n(2)"
    for bad in ("ccd_n", "ccd_n:0", "ccd:2", "iterate"):
        with pytest.raises(ConfigError):
            SolverMode.parse(bad)


def test_load_config(tmp_path):
    cfg = load_config(write_config(tmp_path))
    assert cfg.preset == "insulator-1x1" and cfg.dims == (1, 2)
    assert [s.name for s in cfg.settings] == ["none", "both"]
    assert [m.label for m in cfg.modes] == ["ccd_n(1)", "converge"]
    assert cfg.csv_path == tmp_path / "out.csv"
    assert cfg.sigma is None


@pytest.mark.parametrize("section,line", [
    ("[settings]", "names ="),
    ("[settings]", "names = none, all"),
    ("[solver]", "modes ="),
    ("[solver]", "modes = ccd_n:0"),
    ("[solver]", "backend = gpu"),
    ("[solver]", "tol = -1"),
    ("[mesh]", "dims = 3, 2"),
    ("[mesh]", "dims = 2, x"),
    ("[model]", "preset = metal-1x1"),
    ("[model]", "eri_scale = 0"),
])
def test_config_errors(tmp_path, section, line):
    key = line.split("=")[0].strip()
    text = "\n".join(l for l in SMALL.splitlines() if not l.startswith(key + " "))
    text = text.replace(section, f"{section}\n{line}")
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, text=text))


def test_config_proxy_must_be_larger():
    with pytest.raises(ConfigError):
        ExperimentConfig(dims=(2, 3, 4), tdl_proxy_dims=4)
    with pytest.raises(ConfigError):
        ExperimentConfig(settings=())


def test_missing_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_run_is_deterministic(tmp_path):
    cfg = load_config(write_config(tmp_path))
    first = run_experiment(cfg)
    text = cfg.csv_path.read_bytes()
    second = run_experiment(cfg)
    assert cfg.csv_path.read_bytes() == text
    assert len(first.rows) == 2 * 2 * 2
    assert text.decode().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert rows_to_csv(read_csv_rows(cfg.csv_path)).encode() == text
    assert rows_to_csv(second.rows).encode() == text
    assert not first.diverged


def test_summary_has_entry_per_series(tmp_path):
    cfg = load_config(write_config(tmp_path))
    run_experiment(cfg)
    summary = json.loads(cfg.json_path.read_text())
    keys = {(e["setting"], e["solver_mode"]) for e in summary["series"]}
    assert keys == {(s, m) for s in ("none", "both") for m in ("ccd_n(1)", "converge")}
    assert all(e["verdict"] == "indeterminate" for e in summary["series"])


def test_converge_rows_leave_order_blank(tmp_path):
    cfg = load_config(write_config(tmp_path))
    rows = run_experiment(cfg, write=False).rows
    assert {r["n"] for r in rows if r["solver_mode"] == "converge"} == {""}
    assert {r["n"] for r in rows if r["solver_mode"] == "ccd_n"} == {1}


def test_empty_report_rejected(tmp_path):
    with pytest.raises(ConfigError):
        emit_report(ExperimentResult(), tmp_path / "x.csv")


def test_memory_bound(tmp_path):
    cfg = load_config(write_config(tmp_path, limit=1e-9))
    with pytest.raises(ResourceError):
        run_experiment(cfg, write=False)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", str(write_config(tmp_path))]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["preset"] == "insulator-1x1"
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    assert main(["run", str(write_config(tmp_path, limit=1e-9))]) == 2
    strong = SMALL.replace("insulator-1x1", "insulator-2x2").replace("dims = 1, 2", "dims = 1")
    assert main(["run", str(write_config(tmp_path, scale=20.0, text=strong))]) == 3
    out = tmp_path / "out.csv"
    assert any(r["converged"] is False for r in read_csv_rows(out))


def test_cli_madelung(tmp_path, capsys):
    assert main(["madelung", str(write_config(tmp_path))]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "dims,N_k,sigma,xi,xi_times_cbrt_nk"
    scaled = [float(l.split(",")[4]) for l in lines[1:]]
    np.testing.assert_allclose(scaled, scaled[0], rtol=1e-6)


def test_cli_quadlab(tmp_path):
    out = tmp_path / "quad.csv"
    assert main(["quadlab", str(write_config(tmp_path)), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(QUAD_COLUMNS)
    assert len(lines) == 1 + 3 * 3


def test_cli_fit(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["run", str(cfg)])
    capsys.readouterr()
    rows = read_csv_rows(tmp_path / "out.csv")
    assert main(["fit", str(tmp_path / "out.csv"), "--alpha", "0.333"]) == 2
    capsys.readouterr()
    extended = rows + [dict(r, N_k=27, dims="3x3x3", energy=r["energy"] * 1.01) for r in rows if r["N_k"] == 8]
    path = tmp_path / "ext.csv"
    path.write_text(rows_to_csv(extended))
    assert main(["fit", str(path), "--alpha", "0.333"]) == 0
    fits = json.loads(capsys.readouterr().out)
    assert len(fits) == 4 and all(f["alpha"] == 1.0 / 3.0 for f in fits)
    assert main(["fit", str(path), "--alpha", "steep"]) == 2
    assert fit_csv(path, "1")[0]["alpha"] == 1.0


def test_ccd2_free_exponent_near_one_third(make_system):
    nks, es = [], []
    for n in (2, 3, 4, 5):
        ev, _, plain, _ = make_system("insulator-2x2", n)
        nks.append(n**3)
        es.append(ccd_n(2, ev, plain, SETTINGS["none"])[1].energy.real)
    fit = fit_power_law(ScalingSeries(nks, es))
    assert 0.2 <= fit.alpha <= 0.5
