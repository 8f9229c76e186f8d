"""Run configuration: YAML sections mapped onto the library's parameter types.

Every section is optional and falls back to the documented defaults.
Unknown keys are rejected at every level, and each section is validated
when it is parsed, so a bad file fails before any simulation starts.
"""
from __future__ import annotations

from dataclasses import MISSING, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .budget import PhaseProgram, TimingSequence
from .emitter import PulseChain
from .photons import DetectorModel
from .species import AtomSpecies, load_species, rubidium87
from .trap import BeamGeometry
from .telegraph import OccupancyModel


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class ChopStudy:
    frequencies: tuple = (0.1e6, 0.3e6, 0.6e6, 1e6, 2e6)
    duty_cycle: float = 0.5
    temperature: float = 100e-6
    n_atoms: int = 200
    time_step: float = 5e-9
    max_time: float = 10e-3
    loss_radius_factor: float = 5.0
    background_gas_rate: float = 2.5

    def __post_init__(self):
        if any(f <= 0 for f in self.frequencies):
            raise ValueError("chop frequencies must be positive")
        if self.n_atoms < 1 or self.temperature < 0:
            raise ValueError("need n_atoms >= 1 and temperature >= 0")
        if self.time_step <= 0 or self.max_time <= 0:
            raise ValueError("time_step and max_time must be positive")


@dataclass(frozen=True)
class TelegraphStudy:
    loading_rate: float = 0.5
    loss_rate: float = 2.5
    blockade: bool = True
    background_rate: float = 2100.0
    atom_rate: float = 5900.0
    bin_width: float = 10e-3
    duration: float = 3850.0
    k_max: int = 2
    transitions: bool = True

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.bin_width <= 0 or self.bin_width > self.duration:
            raise ValueError("bin_width must be positive and shorter than the duration")
        if self.background_rate < 0 or self.atom_rate < 0:
            raise ValueError("count rates must be non-negative")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        OccupancyModel(self.loading_rate, self.loss_rate, self.blockade)

    @property
    def model(self) -> OccupancyModel:
        return OccupancyModel(self.loading_rate, self.loss_rate, self.blockade)


@dataclass(frozen=True)
class HbtStudy:
    n_traj: int = 100_000
    n_pulses: int = 1_000_000_000
    collection_efficiency: float = 13500 / (2e6 * 0.999)
    splitter_ratio: float = 0.5
    bin_width: float = 8e-9
    delay_range: float = 5.75e-6
    leakage: bool = True
    write_streams: bool = True

    def __post_init__(self):
        if self.n_traj < 1 or self.n_pulses < 1:
            raise ValueError("n_traj and n_pulses must be >= 1")
        if not 0 <= self.collection_efficiency <= 1 or not 0 <= self.splitter_ratio <= 1:
            raise ValueError("efficiencies and splitter ratio must lie in [0, 1]")
        if self.bin_width <= 0 or self.delay_range < self.bin_width:
            raise ValueError("invalid histogram binning")


@dataclass(frozen=True)
class BudgetInputs:
    fiber_rate: float = 13500.0
    p1: float = 0.999
    target_flux: float | None = 170.0

    def __post_init__(self):
        if self.fiber_rate < 0 or not 0 < self.p1 <= 1:
            raise ValueError("need fiber_rate >= 0 and 0 < p1 <= 1")


def _default_beam():
    return BeamGeometry(waist_w0=1.4e-6, wavelength=810e-9, power=6.9e-3)


@dataclass(frozen=True)
class RunConfig:
    species: AtomSpecies = field(default_factory=rubidium87)
    beam: BeamGeometry = field(default_factory=_default_beam)
    chop: ChopStudy = field(default_factory=ChopStudy)
    pulse_chain: PulseChain = field(default_factory=PulseChain)
    detectors: tuple = (DetectorModel(), DetectorModel())
    telegraph: TelegraphStudy = field(default_factory=TelegraphStudy)
    hbt: HbtStudy = field(default_factory=HbtStudy)
    sequence: TimingSequence = field(default_factory=TimingSequence)
    program: PhaseProgram = field(default_factory=PhaseProgram)
    budget: BudgetInputs = field(default_factory=BudgetInputs)
    seed: int = 0
    output_dir: str = "out"

    @property
    def on_phase_beam(self) -> BeamGeometry:
        """``beam.power`` is time-averaged; the chopped light is this bright while on."""
        return self.beam.with_power(self.beam.power / self.chop.duty_cycle)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_SECTIONS = {
    "beam": BeamGeometry, "chop": ChopStudy, "pulse_chain": PulseChain,
    "telegraph": TelegraphStudy, "hbt": HbtStudy, "sequence": TimingSequence,
    "program": PhaseProgram, "budget": BudgetInputs,
}
_TOP = set(_SECTIONS) | {"species", "detectors", "seed", "output_dir"}


def _number(v):
    # YAML 1.1 reads exponents without a decimal point (1e-6) as strings
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    return v


def _build(cls, raw, where, base=None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    required = {f.name for f in fields(cls) if f.default is MISSING and f.default_factory is MISSING}
    missing = set() if base is not None else required - set(raw)
    if missing:
        raise ConfigError(f"{where}: missing required keys {sorted(missing)}")
    values = {k: tuple(_number(x) for x in v) if isinstance(v, list) else _number(v)
              for k, v in raw.items()}
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(raw: dict | None, base_dir: Path | None = None) -> RunConfig:
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - _TOP
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kw = {}
    for name, cls in _SECTIONS.items():
        if name in raw:
            # beam requires an explicit geometry; others patch the defaults
            base = None if name == "beam" else RunConfig.__dataclass_fields__[name].default_factory()
            kw[name] = _build(cls, raw[name], name, base)
    if "species" in raw:
        path = Path(raw["species"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            kw["species"] = load_species(path)
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"species: {exc}") from exc
    if "detectors" in raw:
        det = raw["detectors"]
        if isinstance(det, dict):
            det = [det, det]
        if not isinstance(det, list) or len(det) != 2:
            raise ConfigError("detectors: give one mapping or a list of two")
        kw["detectors"] = tuple(_build(DetectorModel, d, f"detectors[{i}]", DetectorModel())
                                for i, d in enumerate(det))
    if "seed" in raw:
        if not isinstance(raw["seed"], int) or raw["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        kw["seed"] = raw["seed"]
    if "output_dir" in raw:
        kw["output_dir"] = str(raw["output_dir"])
    return RunConfig(**kw)


_TYPES = {"float": "number", "int": "integer", "bool": "boolean", "str": "string",
          "float | None": ["number", "null"]}


def _section_schema(cls, example, required=()):
    props = {}
    for f in fields(cls):
        v = getattr(example, f.name)
        if f.type == "tuple":
            sch = {"type": "array", "items": {"type": "number"}, "default": list(v)}
        else:
            sch = {"type": _TYPES[f.type], "default": v}
        props[f.name] = sch
    out = {"type": "object", "properties": props, "additionalProperties": False}
    if required:
        out["required"] = list(required)
    return out


def config_schema() -> dict:
    """JSON Schema of the YAML run configuration, with defaults."""
    ref = RunConfig()
    props = {name: _section_schema(cls, getattr(ref, name),
                                   ("waist_w0", "wavelength") if name == "beam" else ())
             for name, cls in _SECTIONS.items()}
    det = _section_schema(DetectorModel, DetectorModel())
    props["detectors"] = {"oneOf": [det, {"type": "array", "items": det,
                                          "minItems": 2, "maxItems": 2}]}
    props["species"] = {"type": "string", "description": "path to a species YAML file"}
    props["seed"] = {"type": "integer", "minimum": 0, "default": 0}
    props["output_dir"] = {"type": "string", "default": "out"}
    return {"$schema": "https://json-schema.org/draft/2020-12/schema",
            "title": "fibertweezer run configuration", "type": "object",
            "properties": props, "additionalProperties": False}


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_config(raw, path.parent)
