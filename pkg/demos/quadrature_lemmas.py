"""Trapezoidal-rule error rates for the singular integrand library on the unit cube.

Each line is one sweep over m in (6, 8, 12, 16) and the fitted log-log slope.
Run with ``python demos/quadrature_lemmas.py``.
"""

from fslab.quad_engine import lemma_series

CASES = [
    ("quaderror0", -2, 1, "smooth periodic integrand: super-algebraic"),
    ("quaderror1", -2, 1, "bare order -2 singularity: m^-1"),
    ("quaderror1", -1, 1, "bare order -1 singularity: m^-2"),
    ("quaderror1_sub", -2, 1, "subtracted and symmetrized: m^-3"),
    ("quaderror2", -2, 1, "order -2 times a bounded bump elsewhere: m^-1"),
    ("quaderror2_2", -2, 1, "product with vanishing factor, s=1: m^-3"),
    ("quaderror2_2", -1, 0, "product with vanishing factor, s=0: m^-3"),
]

for lemma, gamma, s, note in CASES:
    run = lemma_series(lemma, gamma=gamma, s=s)
    errors = "  ".join(f"{e:.2e}" for e in run.series.errors)
    print(f"{lemma:15s} gamma={gamma:2d} s={s}  errors {errors}  slope {run.slope:7.3f}   ({note})")
