"""Atomic species constants and their on-disk format.

Species files are YAML mappings of ``key: value`` pairs. Every field of
:class:`AtomSpecies` is required, in SI units, plus ``format_version``
(currently 1) and an optional ``name``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

SPECIES_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AtomSpecies:
    mass: float
    d1_wavelength: float
    d2_wavelength: float
    d1_linewidth: float
    d2_linewidth: float
    excited_lifetime: float
    saturation_intensity_cycling: float
    name: str = "custom"

    def __post_init__(self):
        for f in fields(self):
            if f.name == "name":
                continue
            v = getattr(self, f.name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{f.name} must be strictly positive, got {v!r}")
        if abs(self.excited_lifetime * self.d2_linewidth - 1.0) > 0.05:
            raise ValueError("excited_lifetime inconsistent with 1/d2_linewidth (>5%)")

    @property
    def natural_linewidth_hz(self) -> float:
        """D2 linewidth as an ordinary frequency (Hz)."""
        return self.d2_linewidth / (2 * np.pi)


def load_species(path: str | Path) -> AtomSpecies:
    """Read a species file, checking its version and keys."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: species file must be a mapping")
    version = raw.pop("format_version", None)
    if version != SPECIES_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {version!r}")
    known = {f.name for f in fields(AtomSpecies)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    return AtomSpecies(**{k: (v if k == "name" else float(v)) for k, v in raw.items()})


def rubidium87() -> AtomSpecies:
    """The shipped default species."""
    with resources.as_file(resources.files("fibertweezer") / "data" / "rb87.yaml") as p:
        return load_species(p)
