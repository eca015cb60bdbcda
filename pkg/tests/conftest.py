import sys
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fslab.lattice_mesh import build_mesh, reciprocal_of  # noqa: E402
from fslab.madelung import EwaldSpec, madelung_constant  # noqa: E402
from fslab.model_system import EriEvaluator, orbital_energies, preset_model, solve_bands  # noqa: E402


@lru_cache(maxsize=None)
def system(name, n, eri_scale=1.0):
    """``(ev, xi, plain_eps, corrected_eps)`` for a preset on an ``n^3`` mesh, cached for the session."""
    model = preset_model(name)
    mesh = build_mesh(reciprocal_of(model.cell), (n, n, n))
    ev = EriEvaluator(solve_bands(model, mesh), eri_scale=eri_scale)
    xi = madelung_constant(EwaldSpec(model.cell, mesh)).xi
    plain = orbital_energies(ev)
    return ev, xi, plain, plain.with_correction(xi)


@pytest.fixture(scope="session")
def make_system():
    return system
