"""Gaussian-beam optical tweezer: intensity, light shift, depth, frequencies."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import constants as csts

from .species import AtomSpecies


class UnsupportedRegimeError(ValueError):
    """Raised for trap light blue-detuned from either D line."""


@dataclass(frozen=True)
class BeamGeometry:
    waist_w0: float
    wavelength: float
    power: float
    focus_position: float = 0.0

    def __post_init__(self):
        if self.wavelength <= 0 or self.waist_w0 <= 0:
            raise ValueError("waist and wavelength must be positive")
        if self.waist_w0 <= self.wavelength / 2:
            raise ValueError("waist_w0 must exceed wavelength/2 (paraxial beam)")
        if self.power < 0:
            raise ValueError("power must be non-negative")

    def with_power(self, power: float) -> "BeamGeometry":
        return replace(self, power=power)

    @property
    def rayleigh_range(self) -> float:
        return rayleigh_range(self.waist_w0, self.wavelength)


@dataclass(frozen=True)
class TrapParameters:
    depth_energy: float
    depth_temperature: float
    radial_frequency: float
    axial_frequency: float
    rayleigh_range: float

    def as_dict(self) -> dict:
        """Interface units: mK, kHz, micrometres."""
        return {
            "depth_mK": self.depth_temperature * 1e3,
            "depth_J": self.depth_energy,
            "radial_frequency_kHz": self.radial_frequency * 1e-3,
            "axial_frequency_kHz": self.axial_frequency * 1e-3,
            "rayleigh_range_um": self.rayleigh_range * 1e6,
        }


def rayleigh_range(w0, wavelength):
    if np.any(np.asarray(w0) <= 0) or np.any(np.asarray(wavelength) <= 0):
        raise ValueError("w0 and wavelength must be positive")
    zr = np.pi * np.asarray(w0, dtype=float) ** 2 / np.asarray(wavelength, dtype=float)
    return float(zr) if zr.ndim == 0 else zr


def beam_radius(geometry: BeamGeometry, z):
    zr = geometry.rayleigh_range
    return geometry.waist_w0 * np.sqrt(1 + ((np.asarray(z) - geometry.focus_position) / zr) ** 2)


def beam_intensity(geometry: BeamGeometry, r, z):
    """Intensity (W/m^2) of a TEM00 beam at radius ``r`` and axial position ``z``."""
    w = beam_radius(geometry, z)
    r = np.asarray(r)
    return 2 * geometry.power / (np.pi * w**2) * np.exp(-2 * r**2 / w**2)


def light_shift_coefficient(species: AtomSpecies, wavelength: float) -> float:
    """Ground-state scalar light shift per unit intensity (J per W/m^2).

    Two-line model (D1 weight 1/3, D2 weight 2/3) including the
    counter-rotating terms. Negative for red detuning.
    """
    c = csts.c
    w = 2 * np.pi * c / wavelength
    w1 = 2 * np.pi * c / species.d1_wavelength
    w2 = 2 * np.pi * c / species.d2_wavelength
    if w >= w2 or w >= w1:
        raise UnsupportedRegimeError(
            f"trap wavelength {wavelength * 1e9:.2f} nm is not red-detuned from both D lines"
        )
    g1, g2 = species.d1_linewidth, species.d2_linewidth
    term1 = g1 / w1**3 * (1 / (w1 - w) + 1 / (w1 + w)) / 3
    term2 = 2 * g2 / w2**3 * (1 / (w2 - w) + 1 / (w2 + w)) / 3
    # scalar prefactor is -3 pi c^2 / 2 times the weighted line sum
    return -3 * np.pi * c**2 / 2 * (term1 + term2)


def dipole_potential(species: AtomSpecies, geometry: BeamGeometry, r, z):
    """Dipole potential energy (J); <= 0 everywhere for red detuning."""
    return light_shift_coefficient(species, geometry.wavelength) * beam_intensity(geometry, r, z)


def trap_depth(species: AtomSpecies, geometry: BeamGeometry) -> float:
    """Trap depth as a temperature (K)."""
    u0 = -dipole_potential(species, geometry, 0.0, geometry.focus_position)
    return float(u0) / csts.k


def trap_frequencies(species: AtomSpecies, geometry: BeamGeometry) -> tuple[float, float]:
    """Harmonic (radial, axial) trap frequencies in Hz at the beam's power."""
    u0 = trap_depth(species, geometry) * csts.k
    if u0 <= 0:
        raise ValueError("trap depth is zero; no harmonic frequencies")
    m = species.mass
    w0 = geometry.waist_w0
    zr = geometry.rayleigh_range
    f_r = np.sqrt(4 * u0 / (m * w0**2)) / (2 * np.pi)
    f_z = np.sqrt(2 * u0 / (m * zr**2)) / (2 * np.pi)
    return float(f_r), float(f_z)


def trap_parameters(species: AtomSpecies, geometry: BeamGeometry) -> TrapParameters:
    depth = trap_depth(species, geometry)
    f_r, f_z = trap_frequencies(species, geometry)
    return TrapParameters(
        depth_energy=depth * csts.k,
        depth_temperature=depth,
        radial_frequency=f_r,
        axial_frequency=f_z,
        rayleigh_range=geometry.rayleigh_range,
    )


def tweezer_geometry(power: float = 13.8e-3) -> BeamGeometry:
    """The fiber tweezer: 1.4 um waist at 810 nm; default is the on-phase power."""
    return BeamGeometry(waist_w0=1.4e-6, wavelength=810e-9, power=power)
