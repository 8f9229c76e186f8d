"""Timing sequence checks and the photon-flux / brightness budget."""
from __future__ import annotations

from dataclasses import dataclass, asdict
import json
import math

from scipy.optimize import bisect


@dataclass(frozen=True)
class TimingSequence:
    """One chop period; times are measured from the dipole-off edge.

    The AOM window is placed by its centre (default: centred on the pulse).
    The dipole light is off for ``(1 - duty) * chop_period`` and on for the
    rest, during which the atom is repumped/cooled.
    """

    chop_period: float = 500e-9
    duty: float = 0.5
    detection_open: float = 25e-9
    detection_length: float = 200e-9
    pulse_time: float = 45e-9
    pulse_length: float = 3.5e-9
    aom_window: float = 30e-9
    aom_center: float = 46.75e-9

    @property
    def off_length(self) -> float:
        return (1 - self.duty) * self.chop_period

    @property
    def pulse_rate(self) -> float:
        return 1 / self.chop_period

    @property
    def windows(self) -> dict[str, tuple[float, float]]:
        return {
            "dipole-off phase": (0.0, self.off_length),
            "dipole-on phase": (self.off_length, self.chop_period),
            "detection": (self.detection_open, self.detection_open + self.detection_length),
            "pulse": (self.pulse_time, self.pulse_time + self.pulse_length),
            "aom": (self.aom_center - self.aom_window / 2, self.aom_center + self.aom_window / 2),
        }

    def scaled(self, factor: float) -> "TimingSequence":
        return TimingSequence(*(getattr(self, f) * (1 if f == "duty" else factor)
                                for f in self.__dataclass_fields__))


@dataclass(frozen=True)
class Violation:
    window: str
    container: str
    message: str

    def __str__(self):
        return self.message


_NAMES = {"detection": "detection exceeds off-phase",
          "pulse": "pulse in dipole-on phase",
          "aom": "aom window outside off-phase"}


def validate_sequence(seq: TimingSequence) -> list[Violation]:
    """Every violated nesting rule; an empty list means the sequence is valid."""
    out = []
    if not 0 < seq.duty < 1:
        out.append(Violation("duty", "chop period", "duty must lie strictly between 0 and 1"))
        return out
    w = seq.windows
    off0, off1 = w["dipole-off phase"]
    tol = 1e-12 * seq.chop_period
    for name in ("detection", "pulse", "aom"):
        a, b = w[name]
        if b - a <= 0 or a < off0 - tol or b > off1 + tol:
            out.append(Violation(name, "dipole-off phase", _NAMES[name]))
    a, b = w["pulse"]
    c, d = w["aom"]
    if (a < c - tol or b > d + tol) and not any(v.window in ("pulse", "aom") for v in out):
        out.append(Violation("pulse", "aom", "pulse outside aom window"))
    return out


@dataclass(frozen=True)
class PhaseProgram:
    generation_duration: float = 2e-3
    verify_time: float = 20e-3
    full_reload_time: float = 1.0
    survival_probability: float = 0.86

    def __post_init__(self):
        if min(self.generation_duration, self.verify_time, self.full_reload_time) <= 0:
            raise ValueError("durations must be positive")
        if not 0 <= self.survival_probability <= 1:
            raise ValueError("survival probability must lie in [0, 1]")

    def with_survival(self, p: float) -> "PhaseProgram":
        return PhaseProgram(self.generation_duration, self.verify_time, self.full_reload_time, p)

    @property
    def mean_load_time(self) -> float:
        p = self.survival_probability
        return p * self.verify_time + (1 - p) * self.full_reload_time


def pulses_per_phase(seq: TimingSequence, program: PhaseProgram) -> int:
    # tolerate float noise in the ratio, e.g. 2e-3 / 500e-9
    return int(math.floor(program.generation_duration / seq.chop_period * (1 + 1e-12)))


def collection_efficiency(fiber_rate: float, pulse_rate: float, p1: float) -> float:
    if pulse_rate * p1 == 0:
        raise ZeroDivisionError("pulse rate and p1 must be non-zero")
    return fiber_rate / (pulse_rate * p1)


def average_flux(fiber_rate: float, program: PhaseProgram) -> float:
    """Renewal cycle: generation, then a fast verify or a full reload."""
    t = program.generation_duration
    return fiber_rate * t / (t + program.mean_load_time)


def solve_survival(fiber_rate: float, program: PhaseProgram, target_flux: float,
                   xtol: float = 1e-6) -> float:
    lo = average_flux(fiber_rate, program.with_survival(0.0))
    hi = average_flux(fiber_rate, program.with_survival(1.0))
    if not lo <= target_flux <= hi:
        raise ValueError(f"target flux {target_flux} outside achievable range [{lo:.4g}, {hi:.4g}]")
    if target_flux == lo:
        return 0.0
    if target_flux == hi:
        return 1.0
    return bisect(lambda p: average_flux(fiber_rate, program.with_survival(p)) - target_flux,
                  0.0, 1.0, xtol=xtol)


def spectral_brightness(flux: float, natural_linewidth: float) -> float:
    """Photons per second per MHz for a Fourier-limited source."""
    if natural_linewidth <= 0:
        raise ValueError("linewidth must be positive")
    return flux / (natural_linewidth * 1e-6)


@dataclass
class BudgetReport:
    pulses_per_phase: int
    fiber_photon_rate: float
    average_flux: float
    spectral_brightness: float
    collection_efficiency: float
    survival_probability: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def budget_report(seq: TimingSequence, program: PhaseProgram, collection_eff: float,
                  p1: float, natural_linewidth: float, target_flux: float | None = None) -> BudgetReport:
    """Forward budget from the collection efficiency.

    With ``target_flux`` the loading survival probability is solved for
    instead of taken from ``program``.
    """
    fiber = collection_eff * seq.pulse_rate * p1
    if target_flux is not None and fiber > 0:
        program = program.with_survival(solve_survival(fiber, program, target_flux))
    flux = average_flux(fiber, program)
    return BudgetReport(
        pulses_per_phase=pulses_per_phase(seq, program),
        fiber_photon_rate=fiber,
        average_flux=flux,
        spectral_brightness=spectral_brightness(flux, natural_linewidth),
        collection_efficiency=collection_eff,
        survival_probability=program.survival_probability,
    )
