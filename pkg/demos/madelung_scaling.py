"""Madelung constant of a 6 Bohr cubic cell: sigma independence and N_k^(-1/3) scaling.

Run with ``python demos/madelung_scaling.py``.
"""

from fslab import EwaldSpec, UnitCell, build_mesh, madelung_constant, reciprocal_of

cell = UnitCell.cubic(6.0)
recip = reciprocal_of(cell)

print("Gamma-only xi for several Ewald widths (the value must not move):")
mesh = build_mesh(recip, (1, 1, 1))
for sigma in (0.5, 1.0, 2.0, 4.0):
    print(f"  sigma = {sigma:4.1f}   xi = {madelung_constant(EwaldSpec(cell, mesh, sigma)).xi:.14f}")
print("  simple-cubic reference -2.8372974794 / a =", -2.8372974794 / 6.0)

print("\nMesh refinement (xi * n stays fixed because an n^3 mesh is an n-times larger cube):")
for n in (1, 2, 3, 4, 6):
    xi = madelung_constant(EwaldSpec(cell, build_mesh(recip, (n, n, n)))).xi
    print(f"  {n}x{n}x{n}   xi = {xi: .12f}   xi * n = {xi * n:.12f}")
