"""Simulation and analysis toolkit for a fiber-pigtailed single-atom tweezer."""
from .species import AtomSpecies, load_species, rubidium87
from .trap import (
    BeamGeometry,
    TrapParameters,
    UnsupportedRegimeError,
    beam_intensity,
    dipole_potential,
    rayleigh_range,
    trap_depth,
    trap_frequencies,
    trap_parameters,
    tweezer_geometry,
)

__version__ = "0.1.0"
