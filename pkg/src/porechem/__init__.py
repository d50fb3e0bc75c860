"""Pore-scale precipitation/dissolution with periodic upscaling.

Layers, bottom to top:

* :mod:`porechem.geometry` -- perforated unit cell and eps-tiled grids;
* :mod:`porechem.kinetics` -- precipitation rate and the multivalued
  dissolution rate with an event-exact precipitate ODE;
* :mod:`porechem.cell_problems` -- periodic corrector and Stokes cell
  problems, effective diffusion S and permeability K;
* :mod:`porechem.micro_sim` / :mod:`porechem.macro_sim` -- transport
  solvers on the perforated and upscaled domains;
* :mod:`porechem.homogenize` -- extension/unfolding operators, oscillation
  quadrature, two-scale error norms, and the eps-sweep harness;
* :mod:`porechem.config` / :mod:`porechem.cli` -- run configuration and the
  command-line entry points.
"""

from .geometry import UnitCell, PerforatedGrid, build_unit_cell, tile_domain, measures
from .kinetics import (
    RateLaw,
    DissolutionResolution,
    precip_rate,
    dissolution_rate,
    regularized_heaviside,
    ode_step,
)
from .cell_problems import (
    EffectiveTensors,
    solve_diffusion_cell,
    solve_stokes_cell,
    assemble_S,
    assemble_K,
    effective_tensors,
)

__version__ = "0.1.0"

__all__ = [
    "UnitCell",
    "PerforatedGrid",
    "build_unit_cell",
    "tile_domain",
    "measures",
    "RateLaw",
    "DissolutionResolution",
    "precip_rate",
    "dissolution_rate",
    "regularized_heaviside",
    "ode_step",
    "EffectiveTensors",
    "solve_diffusion_cell",
    "solve_stokes_cell",
    "assemble_S",
    "assemble_K",
    "effective_tensors",
    "__version__",
]
