"""Finite-size scaling laboratory for periodic coupled-cluster doubles.

Modules
-------
lattice_mesh
    Cells, reciprocal lattices, Monkhorst-Pack meshes and momentum arithmetic.
quad_engine
    Trapezoidal rules, singularity subtraction and a library of singular integrands.
madelung
    Ewald evaluation of the Madelung constant of a mesh supercell.
model_system
    Localized-orbital insulator, ERIs and orbital energies.
ccd_engine
    Contraction map, CCD(n), converged CCD, norms.
scaling_cli
    Mesh sweeps, power-law fits and the ``fslab`` command.
"""

from .ccd_engine import (
    SETTINGS,
    AmplitudeTensor,
    CorrectionSetting,
    ccd_converge,
    ccd_n,
    contraction_map,
    energy_of,
    norm_1,
    norm_inf,
)
from .lattice_mesh import KMesh, ReciprocalLattice, UnitCell, build_mesh, reciprocal_of
from .madelung import EwaldSpec, madelung_constant
from .model_system import EriEvaluator, orbital_energies, preset_model, solve_bands

__version__ = "0.1.0"

__all__ = [
    "SETTINGS",
    "AmplitudeTensor",
    "CorrectionSetting",
    "EriEvaluator",
    "EwaldSpec",
    "KMesh",
    "ReciprocalLattice",
    "UnitCell",
    "build_mesh",
    "ccd_converge",
    "ccd_n",
    "contraction_map",
    "energy_of",
    "madelung_constant",
    "norm_1",
    "norm_inf",
    "orbital_energies",
    "preset_model",
    "reciprocal_of",
    "solve_bands",
]
