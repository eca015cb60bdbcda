"""Finite-size error exponents of CCD(n) and converged CCD under each correction setting.

Runs the sweep in ``experiment.ini`` (a few seconds on one core) and prints the
verdict of the one-third versus one exponent test for every series.  Only the
fully corrected CCD(n) and the converged solver should scale as 1/N_k.
Run with ``python demos/table_scaling.py``.
"""

from pathlib import Path

from fslab.scaling_cli import load_config, run_experiment

config = load_config(Path(__file__).with_name("experiment.ini"))
result = run_experiment(config, write=False)
print("proxy energies:", {k: round(v, 10) for k, v in result.summary["proxy_energy"].items()})
print(f"{'setting':12s} {'solver':10s} {'verdict':10s} {'ratio':>7s} {'free alpha':>10s}")
for entry in result.summary["series"]:
    alpha = entry["fit"].get("free", {}).get("alpha", float("nan"))
    print(f"{entry['setting']:12s} {entry['solver_mode']:10s} {entry['verdict']:10s} "
          f"{entry.get('residual_ratio', float('nan')):7.1f} {alpha:10.3f}")
