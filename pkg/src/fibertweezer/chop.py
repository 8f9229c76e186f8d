"""Classical atom motion in a square-wave chopped Gaussian tweezer.

Trajectories are integrated with a kick-drift-kick (velocity Verlet)
splitting. The chopping enters only through the kick strengths: each
half-kick is weighted by the fraction of its half-step during which the
trap light is on, so steps that straddle an edge stay symplectic.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from numba import njit
from scipy import constants as csts
from scipy.optimize import curve_fit

from .species import AtomSpecies
from .trap import BeamGeometry, trap_depth, trap_frequencies


class ConfigurationError(ValueError):
    pass


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChopWaveform:
    frequency: float
    duty_cycle: float = 0.5
    phase_offset: float = 0.0

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError("chop frequency must be positive")
        if not 0 < self.duty_cycle <= 1:
            raise ValueError("duty_cycle must lie in (0, 1]")

    @property
    def period(self) -> float:
        return 1.0 / self.frequency


@dataclass(frozen=True)
class TrajectoryConfig:
    time_step: float
    max_time: float
    loss_radius_factor: float = 5.0
    background_gas_rate: float = 2.5
    friction_coefficient: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.time_step <= 0 or self.max_time <= 0:
            raise ValueError("time_step and max_time must be positive")
        if self.loss_radius_factor < 3:
            raise ValueError("loss_radius_factor must be >= 3")
        if self.background_gas_rate < 0 or self.friction_coefficient < 0:
            raise ValueError("rates must be non-negative")


@dataclass
class AtomState:
    position: np.ndarray
    velocity: np.ndarray
    alive: bool = True
    loss_time: float | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        if not self.alive and self.loss_time is None:
            raise ValueError("a lost atom needs a loss_time")


@dataclass
class Ensemble:
    """Initial conditions for many atoms, stored as (n, 3) arrays."""

    positions: np.ndarray
    velocities: np.ndarray
    temperature: float = 0.0

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i) -> AtomState:
        return AtomState(self.positions[i], self.velocities[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))


@dataclass
class Trajectory:
    final: AtomState
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    positions: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    velocities: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    time_step: float = 0.0


def chop_state(waveform: ChopWaveform, t):
    """1 while the trap light is on, 0 otherwise."""
    phase = np.mod(np.asarray(t) - waveform.phase_offset, waveform.period)
    return (phase < waveform.duty_cycle * waveform.period).astype(int)


def chop_on_time(waveform: ChopWaveform, t):
    """Cumulative on-time of the waveform from ``phase_offset`` to ``t``."""
    return _on_time(np.asarray(t, dtype=float), waveform.period, waveform.duty_cycle,
                    waveform.phase_offset)


@njit(cache=True)
def _on_time(t, period, duty, phase):
    tau = t - phase
    n = np.floor(tau / period)
    rem = tau - n * period
    return n * duty * period + np.minimum(rem, duty * period)


@njit(cache=True)
def _accel(x, y, z, a0, w0sq, zr):
    # a0 = depth / mass; returns acceleration and potential per unit mass
    zeta = z / zr
    a = 1.0 / (1.0 + zeta * zeta)
    rsq = x * x + y * y
    e = math.exp(-2.0 * rsq * a / w0sq)
    pot = -a0 * a * e
    kr = -4.0 * a0 * a * a * e / w0sq
    az = a0 * e * (-2.0 * zeta * a * a / zr) * (1.0 - 2.0 * rsq * a / w0sq)
    return kr * x, kr * y, az, pot


@njit(cache=True, nogil=True)
def _run(pos, vel, a0, w0sq, zr, period, duty, phase, dt, n_steps, avg_duty,
         loss_r, loss_z, friction, record_every, rec_pos, rec_vel):
    """Integrate one atom. Returns (alive, loss_time, x, y, z, vx, vy, vz)."""
    x, y, z = pos[0], pos[1], pos[2]
    vx, vy, vz = vel[0], vel[1], vel[2]
    half = 0.5 * dt
    damp = math.exp(-friction * half)
    ax, ay, az, pot = _accel(x, y, z, a0, w0sq, zr)
    n_rec = 0
    if record_every > 0:
        rec_pos[0, 0], rec_pos[0, 1], rec_pos[0, 2] = x, y, z
        rec_vel[0, 0], rec_vel[0, 1], rec_vel[0, 2] = vx, vy, vz
        n_rec = 1
    for k in range(n_steps):
        t0 = k * dt
        tau0 = t0 - phase
        # on-fractions of the two half steps
        s0 = _on_scalar(tau0, period, duty)
        s1 = _on_scalar(tau0 + half, period, duty)
        s2 = _on_scalar(tau0 + dt, period, duty)
        f1 = (s1 - s0) / half
        f2 = (s2 - s1) / half
        vx = vx * damp + half * f1 * ax
        vy = vy * damp + half * f1 * ay
        vz = vz * damp + half * f1 * az
        x += dt * vx
        y += dt * vy
        z += dt * vz
        ax, ay, az, pot = _accel(x, y, z, a0, w0sq, zr)
        vx = (vx + half * f2 * ax) * damp
        vy = (vy + half * f2 * ay) * damp
        vz = (vz + half * f2 * az) * damp
        if record_every > 0 and (k + 1) % record_every == 0:
            rec_pos[n_rec, 0], rec_pos[n_rec, 1], rec_pos[n_rec, 2] = x, y, z
            rec_vel[n_rec, 0], rec_vel[n_rec, 1], rec_vel[n_rec, 2] = vx, vy, vz
            n_rec += 1
        if x * x + y * y > loss_r * loss_r or abs(z) > loss_z:
            energy = 0.5 * (vx * vx + vy * vy + vz * vz) + avg_duty * pot
            if energy > 0.0:
                return False, (k + 1) * dt, x, y, z, vx, vy, vz, n_rec
    return True, -1.0, x, y, z, vx, vy, vz, n_rec


@njit(cache=True)
def _on_scalar(tau, period, duty):
    n = math.floor(tau / period)
    rem = tau - n * period
    return n * duty * period + min(rem, duty * period)


def _depth_per_mass(species: AtomSpecies, geometry: BeamGeometry) -> float:
    return trap_depth(species, geometry) * csts.k / species.mass


def max_time_step(waveform: ChopWaveform, species: AtomSpecies, geometry: BeamGeometry) -> float:
    """Largest admissible step: 1/50 of the chop period and 1/100 of the radial period."""
    f_r, _ = trap_frequencies(species, geometry)
    return min(1 / (50 * waveform.frequency), 1 / (100 * f_r))


def _aligned_step(waveform: ChopWaveform, dt: float) -> float:
    # an integer number of steps per chop period keeps edges on step boundaries
    n = math.ceil(waveform.period / dt * (1 - 1e-12))
    return waveform.period / n


def _check_config(waveform, species, geometry, config):
    limit = max_time_step(waveform, species, geometry)
    if config.time_step > limit * (1 + 1e-9):
        raise ConfigurationError(
            f"time_step {config.time_step:.3e} s exceeds the admissible {limit:.3e} s"
        )


def static_energy_drift(species: AtomSpecies, geometry: BeamGeometry, time_step: float,
                        n_steps: int = 100_000, amplitude: float | None = None) -> float:
    """Secular energy change in the unchopped trap, relative to the trap depth.

    The atom starts displaced radially and axially by ``amplitude`` (default
    w0/5). The drift is the difference of the mean energy over the first
    and last tenth of the run, which removes the bounded oscillating error
    of the integrator and leaves only a genuine trend.
    """
    a0 = _depth_per_mass(species, geometry)
    w0 = geometry.waist_w0
    zr = geometry.rayleigh_range
    amp = w0 / 5 if amplitude is None else amplitude
    pos = np.array([amp, 0.3 * amp, amp * zr / w0])
    vel = np.zeros(3)
    rec_every = max(1, n_steps // 2000)
    n_rec = n_steps // rec_every + 1
    rp, rv = np.empty((n_rec, 3)), np.empty((n_rec, 3))
    _run(pos, vel, a0, w0**2, zr, 1.0, 1.0, 0.0, time_step, n_steps, 1.0,
         np.inf, np.inf, 0.0, rec_every, rp, rv)
    pot = _potential_vec(rp, a0, w0**2, zr)
    energy = 0.5 * np.sum(rv**2, axis=1) + pot
    m = max(1, n_rec // 10)
    return abs(energy[-m:].mean() - energy[:m].mean()) / a0


def _potential_vec(p, a0, w0sq, zr):
    zeta = p[:, 2] / zr
    a = 1 / (1 + zeta**2)
    rsq = p[:, 0] ** 2 + p[:, 1] ** 2
    return -a0 * a * np.exp(-2 * rsq * a / w0sq)


def potential_energy(species: AtomSpecies, geometry: BeamGeometry, positions) -> np.ndarray:
    """Full-power potential per unit mass times mass, for (n, 3) positions (J)."""
    p = np.atleast_2d(positions)
    a0 = _depth_per_mass(species, geometry)
    p = p - np.array([0, 0, geometry.focus_position])
    return _potential_vec(p, a0, geometry.waist_w0**2, geometry.rayleigh_range) * species.mass


def sample_thermal_ensemble(temperature: float, geometry: BeamGeometry, species: AtomSpecies,
                            n: int, seed: int | np.random.SeedSequence = 0) -> Ensemble:
    """Thermal atoms in the harmonic approximation of the full-depth trap."""
    depth = trap_depth(species, geometry)
    if temperature >= depth:
        raise ValueError(f"temperature {temperature:.3g} K is not below the depth {depth:.3g} K")
    if temperature < 0 or n < 1:
        raise ValueError("need temperature >= 0 and n >= 1")
    rng = np.random.default_rng(seed)
    f_r, f_z = trap_frequencies(species, geometry)
    kt_m = csts.k * temperature / species.mass
    omega = 2 * np.pi * np.array([f_r, f_r, f_z])
    sig_x = np.sqrt(kt_m) / omega
    pos = rng.standard_normal((n, 3)) * sig_x
    vel = rng.standard_normal((n, 3)) * np.sqrt(kt_m)
    pos[:, 2] += geometry.focus_position
    return Ensemble(pos, vel, temperature)


def integrate_trajectory(state0: AtomState, waveform: ChopWaveform, geometry: BeamGeometry,
                         species: AtomSpecies, config: TrajectoryConfig,
                         record_every: int = 0, self_test: bool = True) -> Trajectory:
    """Integrate one atom for ``config.max_time`` in the chopped potential.

    Background-gas loss is not sampled here; it is applied analytically by
    :func:`survival_curve`. ``record_every`` > 0 stores every n-th step.
    """
    _check_config(waveform, species, geometry, config)
    dt = _aligned_step(waveform, config.time_step)
    if self_test:
        drift = static_energy_drift(species, geometry, dt, n_steps=2000)
        if drift > 1e-3:
            raise ConfigurationError(f"integrator unstable: energy drift {drift:.2e} of depth")
    n_steps = int(round(config.max_time / dt))
    a0 = _depth_per_mass(species, geometry)
    w0, zr = geometry.waist_w0, geometry.rayleigh_range
    n_rec = n_steps // record_every + 1 if record_every > 0 else 1
    rp, rv = np.empty((n_rec, 3)), np.empty((n_rec, 3))
    pos = state0.position - np.array([0, 0, geometry.focus_position])
    alive, t_loss, *xv, n_used = _run(
        pos, state0.velocity, a0, w0**2, zr, waveform.period, waveform.duty_cycle,
        waveform.phase_offset, dt, n_steps, waveform.duty_cycle,
        config.loss_radius_factor * w0, config.loss_radius_factor * zr,
        config.friction_coefficient, record_every, rp, rv)
    final = AtomState(np.array(xv[:3]) + np.array([0, 0, geometry.focus_position]),
                      np.array(xv[3:]), bool(alive), None if alive else float(t_loss))
    if record_every > 0:
        times = np.arange(n_used) * record_every * dt
        rp[:n_used, 2] += geometry.focus_position
        return Trajectory(final, times, rp[:n_used], rv[:n_used], dt)
    return Trajectory(final, time_step=dt)


def ensemble_loss_times(ensemble: Ensemble, waveform: ChopWaveform, geometry: BeamGeometry,
                        species: AtomSpecies, config: TrajectoryConfig, jobs: int = 1) -> np.ndarray:
    """Dynamical loss time of every atom (inf for survivors).

    Trajectories are deterministic given their initial state, so the
    result does not depend on ``jobs``.
    """
    _check_config(waveform, species, geometry, config)
    dt = _aligned_step(waveform, config.time_step)
    drift = static_energy_drift(species, geometry, dt, n_steps=2000)
    if drift > 1e-3:
        raise ConfigurationError(f"integrator unstable: energy drift {drift:.2e} of depth")
    n_steps = int(round(config.max_time / dt))
    a0 = _depth_per_mass(species, geometry)
    w0, zr = geometry.waist_w0, geometry.rayleigh_range
    pos = ensemble.positions - np.array([0, 0, geometry.focus_position])
    out = np.full(len(ensemble), np.inf)
    dummy = np.empty((1, 3))

    def work(idx):
        for i in idx:
            alive, t_loss, *_ = _run(
                pos[i], ensemble.velocities[i], a0, w0**2, zr, waveform.period,
                waveform.duty_cycle, waveform.phase_offset, dt, n_steps, waveform.duty_cycle,
                config.loss_radius_factor * w0, config.loss_radius_factor * zr,
                config.friction_coefficient, 0, dummy, dummy)
            if not alive:
                out[i] = t_loss

    chunks = np.array_split(np.arange(len(ensemble)), max(1, jobs))
    if jobs <= 1:
        work(chunks[0])
    else:
        with ThreadPoolExecutor(jobs) as pool:
            list(pool.map(work, chunks))
    return out


@dataclass
class SurvivalCurve:
    times: np.ndarray
    fraction: np.ndarray
    n_atoms: int
    frequency: float

    def stderr(self) -> np.ndarray:
        f = self.fraction
        return np.sqrt(np.clip(f * (1 - f), 0, None) / self.n_atoms)


def survival_curve(ensemble: Ensemble, waveform: ChopWaveform, geometry: BeamGeometry,
                   species: AtomSpecies, config: TrajectoryConfig, n_points: int = 101,
                   jobs: int = 1, loss_times: np.ndarray | None = None) -> SurvivalCurve:
    """Surviving fraction vs time, including background-gas loss."""
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    if len(ensemble) < 100:
        warnings.warn("survival from fewer than 100 atoms is statistically weak")
    if loss_times is None:
        loss_times = ensemble_loss_times(ensemble, waveform, geometry, species, config, jobs)
    t = np.linspace(0, config.max_time, n_points)
    dyn = (loss_times[None, :] > t[:, None]).mean(axis=1)
    frac = dyn * np.exp(-config.background_gas_rate * t)
    return SurvivalCurve(t, frac, len(ensemble), waveform.frequency)


def _exp_decay(t, amp, tau):
    return amp * np.exp(-t / tau)


@dataclass
class LifetimePoint:
    frequency: float
    lifetime: float
    fit_error: float
    ok: bool = True
    message: str = ""


def fit_lifetime(curve: SurvivalCurve) -> LifetimePoint:
    """1/e lifetime from an exponential fit to a survival curve."""
    t, f = curve.times, curve.fraction
    try:
        if np.all(f[1:] <= 0):
            raise RuntimeError("no survivors after t=0")
        sigma = np.maximum(curve.stderr(), 1e-3)
        tau0 = max(t[-1] / max(-np.log(max(f[-1], 1e-6)), 1e-3), t[1])
        popt, pcov = curve_fit(_exp_decay, t, f, p0=(1.0, tau0), sigma=sigma,
                               bounds=([0, 1e-9], [1.5, np.inf]), maxfev=10_000)
        err = float(np.sqrt(pcov[1, 1])) if np.isfinite(pcov[1, 1]) else float("nan")
        return LifetimePoint(curve.frequency, float(popt[1]), err)
    except (RuntimeError, ValueError) as exc:
        return LifetimePoint(curve.frequency, float("nan"), float("nan"), False, str(exc))


def lifetime_vs_chop(frequencies, ensemble: Ensemble, geometry: BeamGeometry,
                     species: AtomSpecies, config: TrajectoryConfig, duty_cycle: float = 0.5,
                     jobs: int = 1, return_curves: bool = False):
    """Fitted lifetime for each chop frequency; failures are reported per point.

    The integration step is the smaller of ``config.time_step`` and the
    admissible step at each frequency. With ``return_curves`` the survival
    curves are returned as a second list.
    """
    frequencies = list(frequencies)
    if not frequencies:
        raise ValueError("no chop frequencies given")
    points, curves = [], []
    for f in frequencies:
        wf = ChopWaveform(f, duty_cycle)
        dt = min(config.time_step, max_time_step(wf, species, geometry))
        cfg = TrajectoryConfig(dt, config.max_time, config.loss_radius_factor,
                               config.background_gas_rate, config.friction_coefficient,
                               config.rng_seed)
        curve = survival_curve(ensemble, wf, geometry, species, cfg, jobs=jobs)
        curves.append(curve)
        points.append(fit_lifetime(curve))
    return (points, curves) if return_curves else points


def secular_frequency(trajectory: Trajectory, axis: int = 0, min_prominence: float = 5.0) -> float:
    """Dominant oscillation frequency (Hz) of one coordinate of a recorded trajectory.

    Hann-windowed, zero-padded spectrum with parabolic interpolation of the
    log-magnitude around the highest peak.
    """
    t = trajectory.times
    if len(t) < 16:
        raise EstimationError("trajectory too short for a spectral estimate")
    x = trajectory.positions[:, axis] - trajectory.positions[:, axis].mean()
    dt = t[1] - t[0]
    n_fft = 1 << int(np.ceil(np.log2(len(x) * 8)))
    amp = np.abs(np.fft.rfft(x * np.hanning(len(x)), n_fft))
    freqs = np.fft.rfftfreq(n_fft, dt)
    amp[0] = 0
    k = int(np.argmax(amp))
    if k == 0 or k == len(amp) - 1 or amp[k] < min_prominence * np.median(amp):
        raise EstimationError("no clear spectral peak")
    a, b, c = np.log(amp[k - 1: k + 2] + 1e-300)
    shift = 0.5 * (a - c) / (a - 2 * b + c)
    return float(freqs[k] + shift * (freqs[1] - freqs[0]))


def lifetimes_to_csv(points: list[LifetimePoint], path) -> None:
    with open(path, "w") as fh:
        fh.write("frequency_Hz,lifetime_s,fit_error_s,ok\n")
        for p in points:
            fh.write(f"{p.frequency:.6g},{p.lifetime:.9g},{p.fit_error:.9g},{int(p.ok)}\n")


def survival_to_csv(curves: list[SurvivalCurve], path) -> None:
    with open(path, "w") as fh:
        fh.write("frequency_Hz,time_s,survival\n")
        for c in curves:
            for t, f in zip(c.times, c.fraction):
                fh.write(f"{c.frequency:.6g},{t:.9g},{f:.9g}\n")
