"""Pulsed two-level emitter driven through an EOM + AOM chain.

Times are measured from the falling edge of the dipole light (start of the
dark half-period). Rabi frequencies and linewidths are angular (rad/s).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import json
import math

import numpy as np
from numba import njit
from scipy.linalg import expm
from scipy.optimize import minimize_scalar


class CalibrationError(RuntimeError):
    pass


class StepSizeError(ValueError):
    pass


@dataclass(frozen=True)
class PulseChain:
    """Excitation timing. ``eom_pulse_time`` is the rising half-maximum of the pulse.

    ``leak_field`` overrides the EOM field floor, which otherwise follows
    from the intensity extinction ratio as 1/sqrt(ratio).
    """

    eom_duration: float = 3.5e-9
    eom_rise_time: float = 1.0e-9
    eom_extinction_intensity: float = 800.0
    aom_window: float = 30e-9
    aom_open_time: float = 31.75e-9
    eom_pulse_time: float = 45e-9
    detection_open: float = 25e-9
    detection_window: float = 200e-9
    aom_extinction_intensity: float = 1e6
    dark_duration: float = 250e-9
    leak_field: float | None = None

    def __post_init__(self):
        if self.eom_duration <= 0 or self.eom_rise_time < 0 or self.aom_window <= 0:
            raise ValueError("durations must be positive")
        if self.eom_rise_time > self.eom_duration:
            raise ValueError("rise time longer than the pulse")
        if self.eom_extinction_intensity < 1:
            raise ValueError("extinction ratio must be >= 1")
        a0, a1 = self.aom_interval
        e0, e1 = self.eom_interval
        d0, d1 = self.detection_interval
        eps = 1e-15
        if not (a0 - eps <= e0 and e1 <= a1 + eps):
            raise ValueError("EOM pulse is not inside the AOM window")
        if not (-eps <= a0 and a1 <= self.dark_duration + eps):
            raise ValueError("AOM window is not inside the dipole-off phase")
        if not (-eps <= d0 and d1 <= self.dark_duration + eps):
            raise ValueError("detection window is not inside the dipole-off phase")

    @property
    def eom_interval(self) -> tuple[float, float]:
        r = self.eom_rise_time / 2
        return self.eom_pulse_time - r, self.eom_pulse_time + self.eom_duration + r

    @property
    def aom_interval(self) -> tuple[float, float]:
        return self.aom_open_time, self.aom_open_time + self.aom_window

    @property
    def detection_interval(self) -> tuple[float, float]:
        return self.detection_open, self.detection_open + self.detection_window

    @property
    def field_floor(self) -> float:
        if self.leak_field is not None:
            return self.leak_field
        return 1 / math.sqrt(self.eom_extinction_intensity)

    def without_leakage(self) -> "PulseChain":
        return _replace(self, leak_field=0.0)


def _replace(chain, **kw):
    return replace(chain, **kw)


@dataclass(frozen=True)
class ExcitationBeam:
    """Recorded metadata; the peak Rabi frequency always comes from calibration."""

    waist: float = 50e-6
    peak_power: float = 2e-3
    detuning: float = 0.0

    def __post_init__(self):
        if self.waist <= 0 or self.peak_power <= 0:
            raise ValueError("waist and power must be positive")

    @property
    def peak_intensity(self) -> float:
        return 2 * self.peak_power / (np.pi * self.waist**2)


@dataclass
class TwoLevelState:
    excited_population: float
    coherence: complex = 0j

    def __post_init__(self):
        p = self.excited_population
        if not -1e-12 <= p <= 1 + 1e-12:
            raise ValueError("population outside [0, 1]")
        if p * (1 - p) < abs(self.coherence) ** 2 - 1e-12:
            raise ValueError("state is not a positive density matrix")


GROUND = TwoLevelState(0.0)
EXCITED = TwoLevelState(1.0)


def eom_shape(chain: PulseChain, t):
    """EOM field transmission without leakage: raised-cosine edges, unit plateau."""
    t = np.asarray(t, dtype=float)
    t_on, t_off = chain.eom_pulse_time, chain.eom_pulse_time + chain.eom_duration
    r = chain.eom_rise_time
    if r == 0:
        return ((t >= t_on) & (t < t_off)).astype(float)
    rise = np.clip((t - (t_on - r / 2)) / r, 0, 1)
    fall = np.clip(((t_off + r / 2) - t) / r, 0, 1)
    return 0.5 * (1 - np.cos(np.pi * rise)) * 0.5 * (1 - np.cos(np.pi * fall))


def rabi_envelope(chain: PulseChain, omega_peak: float, t):
    """Rabi frequency Omega(t) = omega_peak * g_eom(t) * g_aom(t)."""
    t = np.asarray(t, dtype=float)
    floor = chain.field_floor
    g_eom = floor + (1 - floor) * eom_shape(chain, t)
    a0, a1 = chain.aom_interval
    g_aom = ((t >= a0) & (t < a1)).astype(float)
    return omega_peak * g_eom * g_aom


@dataclass
class ObeTrajectory:
    times: np.ndarray
    rho_gg: np.ndarray
    rho_ee: np.ndarray
    coherence: np.ndarray

    @property
    def trace(self):
        return self.rho_gg + self.rho_ee

    def final_state(self) -> TwoLevelState:
        return TwoLevelState(float(self.rho_ee[-1]), complex(self.coherence[-1]))


@njit(cache=True)
def _obe_rhs(gg, ee, c, om, det, gamma, recycle):
    im = c.imag
    dee = -om * im - gamma * ee
    dgg = om * im + recycle * gamma * ee
    dc = -0.5j * om * (gg - ee) + 1j * det * c - 0.5 * gamma * c
    return dgg, dee, dc


@njit(cache=True)
def _rk4(gg, ee, c, om_a, om_m, om_b, h, det, gamma, recycle, out_gg, out_ee, out_c):
    out_gg[0], out_ee[0], out_c[0] = gg, ee, c
    for k in range(len(om_a)):
        a1, b1, c1 = _obe_rhs(gg, ee, c, om_a[k], det, gamma, recycle)
        a2, b2, c2 = _obe_rhs(gg + 0.5 * h * a1, ee + 0.5 * h * b1, c + 0.5 * h * c1,
                              om_m[k], det, gamma, recycle)
        a3, b3, c3 = _obe_rhs(gg + 0.5 * h * a2, ee + 0.5 * h * b2, c + 0.5 * h * c2,
                              om_m[k], det, gamma, recycle)
        a4, b4, c4 = _obe_rhs(gg + h * a3, ee + h * b3, c + h * c3, om_b[k], det, gamma, recycle)
        gg = gg + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        ee = ee + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        c = c + h / 6 * (c1 + 2 * c2 + 2 * c3 + c4)
        out_gg[k + 1], out_ee[k + 1], out_c[k + 1] = gg, ee, c


def default_step(omega_peak: float, gamma: float) -> float:
    rates = [r for r in (abs(omega_peak), gamma) if r > 0]
    return 1 / (20 * max(rates)) if rates else 1e-10


def evolve_obe(state0: TwoLevelState, chain: PulseChain | None, omega_peak: float, gamma: float,
               detuning: float, t_span: tuple[float, float], step: float | None = None,
               recycle: bool = True, envelope=None, positivity_tol: float = 1e-7) -> ObeTrajectory:
    """Fixed-step RK4 integration of the two-level optical Bloch equations.

    ``recycle=False`` drops the return of decayed population to the ground
    state, giving the no-emission (conditional) evolution whose trace is
    the probability of no photon so far. ``envelope`` (a callable of t)
    replaces the chain's Rabi envelope when given.
    """
    t0, t1 = t_span
    if step is None:
        step = default_step(omega_peak, gamma)
    if step > default_step(omega_peak, gamma) * (1 + 1e-9):
        raise StepSizeError("step exceeds min(1/(20 Omega), 1/(20 Gamma))")
    env = envelope if envelope is not None else (lambda t: rabi_envelope(chain, omega_peak, t))
    # grid segments end on envelope discontinuities so RK4 keeps its order
    cuts = [t0, t1]
    if chain is not None and envelope is None:
        cuts += list(chain.aom_interval)
        if chain.eom_rise_time == 0:
            cuts += list(chain.eom_interval)
    cuts = np.unique(np.clip(cuts, t0, t1))
    p = state0.excited_population
    gg0, ee0, c0 = 1 - p, p, complex(state0.coherence)
    parts = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(math.ceil((b - a) / step - 1e-9)))
        h = (b - a) / n
        times = a + h * np.arange(n + 1)
        tiny = 1e-6 * h
        om_a = np.asarray(env(times[:-1] + tiny), dtype=float)
        om_m = np.asarray(env(times[:-1] + h / 2), dtype=float)
        om_b = np.asarray(env(times[1:] - tiny), dtype=float)
        gg, ee, cc = np.empty(n + 1), np.empty(n + 1), np.empty(n + 1, complex)
        _rk4(gg0, ee0, c0, om_a, om_m, om_b, h, detuning, gamma,
             1.0 if recycle else 0.0, gg, ee, cc)
        gg0, ee0, c0 = gg[-1], ee[-1], cc[-1]
        skip = 1 if parts else 0
        parts.append((times[skip:], gg[skip:], ee[skip:], cc[skip:]))
    if not parts:
        parts = [(np.array([t0]), np.array([gg0]), np.array([ee0]), np.array([c0]))]
    times, gg, ee, cc = (np.concatenate(z) for z in zip(*parts))
    # conditional runs stay pure, so only their populations are checked
    if recycle:
        bad = positivity_margin(gg, ee, cc).min() < -positivity_tol
    else:
        bad = min(gg.min(), ee.min()) < -positivity_tol * max(1.0, float((gg + ee).max()))
    if bad:
        raise StepSizeError("density matrix lost positivity; reduce the step")
    return ObeTrajectory(times, gg, ee, cc)


def positivity_margin(gg, ee, cc):
    """(rho_gg rho_ee - |c|^2) / trace^2; negative means a non-physical state."""
    tr = gg + ee
    return (gg * ee - np.abs(cc) ** 2) / np.where(tr > 0, tr, 1.0) ** 2


def _pulse_end(chain: PulseChain) -> float:
    return chain.eom_interval[1]


def _drive_start(chain: PulseChain) -> float:
    return chain.aom_interval[0]


def post_pulse_excitation(chain: PulseChain, omega_peak: float, gamma: float,
                          detuning: float = 0.0) -> float:
    """Excited population right after the EOM pulse, starting from the ground state."""
    tr = evolve_obe(GROUND, chain, omega_peak, gamma, detuning,
                    (_drive_start(chain), _pulse_end(chain)),
                    step=default_step(omega_peak, gamma))
    return float(tr.rho_ee[-1])


def calibrate_pi_pulse(chain: PulseChain, gamma: float, detuning: float = 0.0,
                       bracket: tuple[float, float] = (0.5, 1.6), xtol: float = 1e-4) -> float:
    """Peak Rabi frequency maximizing the excited population after the EOM pulse.

    The search runs over ``bracket`` times the nominal pi/duration and
    uses golden-section search after checking the response is unimodal.
    """
    nominal = np.pi / chain.eom_duration
    lo, hi = bracket[0] * nominal, bracket[1] * nominal
    probe = np.linspace(lo, hi, 15)
    vals = np.array([post_pulse_excitation(chain, om, gamma, detuning) for om in probe])
    k = int(np.argmax(vals))
    if k == 0 or k == len(vals) - 1:
        raise CalibrationError("maximum at the edge of the search bracket")
    d = np.diff(vals)
    if np.any(d[:k] < 0) or np.any(d[k:] > 0):
        raise CalibrationError("excitation is not unimodal over the bracket")
    res = minimize_scalar(lambda om: -post_pulse_excitation(chain, om, gamma, detuning),
                          bracket=(probe[k - 1], probe[k], probe[k + 1]), method="golden",
                          tol=xtol)
    return float(res.x)


def pulse_area(chain: PulseChain, omega_peak: float, n: int = 200_001) -> float:
    """Area of the EOM pulse alone (leakage excluded)."""
    e0, e1 = chain.eom_interval
    t = np.linspace(e0 - 1e-9, e1 + 1e-9, n)
    return float(np.trapezoid(omega_peak * eom_shape(chain, t), t))


def single_photon_window_probability(chain: PulseChain, gamma: float,
                                     omega_peak: float | None = None,
                                     detuning: float = 0.0) -> float:
    """Probability of at least one spontaneous emission inside the detection window."""
    if omega_peak is None:
        omega_peak = calibrate_pi_pulse(chain, gamma, detuning)
    d0, d1 = chain.detection_interval
    if d1 <= d0:
        return 0.0
    step = default_step(omega_peak, gamma)
    before = evolve_obe(GROUND, chain, omega_peak, gamma, detuning, (0.0, d0), step)
    s0 = TwoLevelState(float(np.clip(before.rho_ee[-1], 0, 1)), complex(before.coherence[-1]))
    cond = evolve_obe(s0, chain, omega_peak, gamma, detuning, (d0, d1), step, recycle=False)
    return float(1 - cond.trace[-1])


@dataclass
class EmissionDensity:
    times: np.ndarray
    density: np.ndarray
    window_probability: float


def emission_time_distribution(chain: PulseChain, omega_peak: float, gamma: float,
                               detuning: float = 0.0, step: float | None = None) -> EmissionDensity:
    """Emission-time density over the detection window.

    Shape Gamma*rho_ee(t), scaled to integrate to the window probability.
    """
    d0, d1 = chain.detection_interval
    step = step or default_step(omega_peak, gamma)
    tr = evolve_obe(GROUND, chain, omega_peak, gamma, detuning, (0.0, d1), step)
    sel = tr.times >= d0 - 1e-15
    t, rate = tr.times[sel], gamma * tr.rho_ee[sel]
    p = single_photon_window_probability(chain, gamma, omega_peak, detuning)
    norm = np.trapezoid(rate, t)
    density = rate * (p / norm) if norm > 0 else np.zeros_like(rate)
    return EmissionDensity(t, density, p)


@dataclass
class EmissionStatistics:
    """Per-pulse photon-number statistics from quantum trajectories.

    ``jump_times``/``jump_traj`` list every emission in the dark phase
    (time, trajectory index); ``counts`` counts those inside the detection
    window per trajectory.
    """

    p0: float
    p1: float
    p2plus: float
    mean_emission_time: float
    jump_times: np.ndarray
    jump_traj: np.ndarray
    counts: np.ndarray
    n_traj: int
    checkpoint_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    checkpoint_rho_ee: np.ndarray = field(default_factory=lambda: np.empty(0))
    checkpoint_stderr: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def p2_stderr(self) -> float:
        return math.sqrt(self.p2plus * (1 - self.p2plus) / self.n_traj)

    @property
    def mean_photon_number(self) -> float:
        return float(self.counts.mean())

    def report(self) -> dict:
        return {
            "p0": self.p0, "p1": self.p1, "p2plus": self.p2plus,
            "p2plus_stderr": self.p2_stderr, "mean_photon_number": self.mean_photon_number,
            "mean_emission_time_s": self.mean_emission_time, "n_traj": self.n_traj,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.report(), fh, indent=2)


def _step_propagators(chain, omega_peak, gamma, detuning, t0, t1, dt, envelope=None):
    n = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
    h = (t1 - t0) / n
    tm = t0 + h * (np.arange(n) + 0.5)
    om = envelope(tm) if envelope is not None else rabi_envelope(chain, omega_peak, tm)
    U = np.empty((n, 2, 2), complex)
    # basis (g, e); effective Hamiltonian with the non-Hermitian decay term
    for k in range(n):
        H = np.array([[0, om[k] / 2], [om[k] / 2, -detuning - 0.5j * gamma]])
        U[k] = expm(-1j * H * h)
    return U, h, n


@njit(cache=True, nogil=True)
def _jump_loop(U, h, t0, gamma, uniforms, t_tail_end, ck_idx, tail_ck_t,
               out_times, out_traj, ck_sum, ck_sq):
    n_traj, n_draw = uniforms.shape
    n_steps = U.shape[0]
    n_out = 0
    n_ck = len(ck_idx)
    n_tail = len(tail_ck_t)
    for i in range(n_traj):
        cg, ce = 1.0 + 0j, 0j
        d = 0
        r = uniforms[i, d]
        ci = 0
        while ci < n_ck and ck_idx[ci] == 0:
            ci += 1
        for k in range(n_steps):
            ng = U[k, 0, 0] * cg + U[k, 0, 1] * ce
            ne = U[k, 1, 0] * cg + U[k, 1, 1] * ce
            cg, ce = ng, ne
            norm = cg.real ** 2 + cg.imag ** 2 + ce.real ** 2 + ce.imag ** 2
            if norm < r:
                out_times[n_out] = t0 + (k + 1) * h
                out_traj[n_out] = i
                n_out += 1
                cg, ce = 1.0 + 0j, 0j
                d += 1
                if d >= n_draw:
                    return -1
                r = uniforms[i, d]
                norm = 1.0
            while ci < n_ck and ck_idx[ci] == k + 1:
                pe = (ce.real ** 2 + ce.imag ** 2) / norm
                ck_sum[ci] += pe
                ck_sq[ci] += pe * pe
                ci += 1
        # free decay after the drive: at most one more emission
        ng = cg.real ** 2 + cg.imag ** 2
        nx = ce.real ** 2 + ce.imag ** 2
        t_end = t0 + n_steps * h
        t_jump = np.inf
        if r > ng and nx > 0:
            t_jump = t_end - math.log((r - ng) / nx) / gamma
            if t_jump <= t_tail_end:
                out_times[n_out] = t_jump
                out_traj[n_out] = i
                n_out += 1
        for j in range(n_tail):
            tt = tail_ck_t[j]
            if tt < t_jump:
                decayed = nx * math.exp(-gamma * (tt - t_end))
                pe = decayed / (ng + decayed)
            else:
                pe = 0.0
            ck_sum[n_ck + j] += pe
            ck_sq[n_ck + j] += pe * pe
    return n_out


def jump_monte_carlo(chain: PulseChain, omega_peak: float, gamma: float, n_traj: int,
                     seed=0, detuning: float = 0.0, dt: float = 1e-11,
                     checkpoints=None, max_jumps: int = 12, envelope=None) -> EmissionStatistics:
    """Quantum-trajectory simulation of one dark phase per trajectory.

    The atom starts in the ground state (ideal repumping during the dipole
    phase). No-jump evolution uses exact per-step propagators of the
    non-Hermitian Hamiltonian (Rabi frequency frozen at the step midpoint);
    a jump fires when the squared norm drops below a uniform draw and
    resets the atom to the ground state. After the AOM closes the
    remaining decay is sampled analytically.

    ``checkpoints`` (times, s) collect the trajectory-averaged excited
    population and its standard error.
    """
    a0, a1 = chain.aom_interval
    t_tail_end = chain.dark_duration
    U, h, n_steps = _step_propagators(chain, omega_peak, gamma, detuning, a0, a1, dt, envelope)
    rng = np.random.default_rng(seed)
    uniforms = rng.random((n_traj, max_jumps + 1))
    ck = np.sort(np.asarray([] if checkpoints is None else checkpoints, dtype=float))
    if np.any(ck < a0):
        raise ValueError("checkpoints must not precede the AOM opening")
    in_drive = ck <= a0 + n_steps * h + 1e-15
    ck_idx = np.round((ck[in_drive] - a0) / h).astype(np.int64)
    tail_t = ck[~in_drive]
    out_times = np.empty(n_traj * (max_jumps + 1))
    out_traj = np.empty(n_traj * (max_jumps + 1), dtype=np.int64)
    ck_sum = np.zeros(len(ck))
    ck_sq = np.zeros(len(ck))
    n_out = _jump_loop(U, h, a0, gamma, uniforms, t_tail_end, ck_idx, tail_t,
                       out_times, out_traj, ck_sum, ck_sq)
    if n_out < 0:
        raise RuntimeError("a trajectory exceeded max_jumps; raise max_jumps")
    times, traj = out_times[:n_out], out_traj[:n_out]
    d0, d1 = chain.detection_interval
    inside = (times >= d0) & (times < d1)
    counts = np.bincount(traj[inside], minlength=n_traj)
    p0 = float(np.mean(counts == 0))
    p1 = float(np.mean(counts == 1))
    p2 = 1.0 - p0 - p1
    mean_t = float(times[inside].mean()) if inside.any() else float("nan")
    mean_ck = ck_sum / n_traj
    se_ck = np.sqrt(np.clip(ck_sq / n_traj - mean_ck**2, 0, None) / n_traj)
    ck_times = np.concatenate([a0 + ck_idx * h, tail_t])
    return EmissionStatistics(p0, p1, p2, mean_t, times, traj, counts, n_traj,
                              ck_times, mean_ck, se_ck)


@dataclass(frozen=True)
class DurationVerdict:
    verdict: str
    lower_limit: float
    upper_limit: float


def pulse_duration_constraints(tau: float, gamma: float, hyperfine_splitting: float,
                               margin_low: float = 1.5, margin_high: float = 0.5) -> DurationVerdict:
    """Check a pulse is short against 1/Gamma and long against 1/(2 * splitting).

    ``hyperfine_splitting`` is an ordinary frequency (Hz); ``gamma`` in 1/s.
    """
    if tau <= 0 or gamma <= 0 or hyperfine_splitting <= 0:
        raise ValueError("inputs must be positive")
    low = margin_low / (2 * hyperfine_splitting)
    high = margin_high / gamma
    if tau > high:
        v = "too_long"
    elif tau < low:
        v = "too_short"
    else:
        v = "ok"
    return DurationVerdict(v, low, high)


def envelope_to_csv(chain: PulseChain, omega_peak: float, path, n: int = 2001) -> None:
    t = np.linspace(0, chain.dark_duration, n)
    om = rabi_envelope(chain, omega_peak, t)
    with open(path, "w") as fh:
        fh.write("time_ns,rabi_rad_per_s\n")
        for a, b in zip(t, om):
            fh.write(f"{a * 1e9:.6f},{b:.9g}\n")
