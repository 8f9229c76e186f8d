import numpy as np
import pytest
from scipy import constants as csts

from fibertweezer import trap_frequencies
from fibertweezer.chop import (AtomState, ChopWaveform, ConfigurationError, EstimationError,
                               Ensemble, SurvivalCurve, TrajectoryConfig, chop_on_time,
                               chop_state, ensemble_loss_times, fit_lifetime,
                               integrate_trajectory, lifetime_vs_chop, lifetimes_to_csv,
                               max_time_step, sample_thermal_ensemble, secular_frequency,
                               static_energy_drift, survival_curve, survival_to_csv)


def test_chop_state_square_wave():
    wf = ChopWaveform(2e6, 0.5)
    assert chop_state(wf, 100e-9) == 1
    assert chop_state(wf, 300e-9) == 0
    assert chop_state(wf, 100e-9 + 7 * 500e-9) == 1
    t = np.linspace(0, 10e-6, 100_001)[:-1]
    assert chop_state(ChopWaveform(2e6, 1 - 1e-6), t).mean() > 0.999


@pytest.mark.parametrize("duty", [0.1, 0.25, 0.5, 0.8])
def test_on_fraction_equals_duty(duty):
    wf = ChopWaveform(1.3e6, duty, phase_offset=17e-9)
    assert chop_on_time(wf, wf.phase_offset + wf.period) == pytest.approx(duty * wf.period)
    assert chop_on_time(wf, wf.phase_offset + 13 * wf.period) == pytest.approx(13 * duty * wf.period)


def test_waveform_and_config_validation():
    with pytest.raises(ValueError):
        ChopWaveform(0.0)
    with pytest.raises(ValueError):
        ChopWaveform(1e6, 0.0)
    with pytest.raises(ValueError):
        TrajectoryConfig(1e-9, 1e-3, loss_radius_factor=2)


def test_thermal_ensemble_equipartition(rb, on_beam):
    T = 100e-6
    ens = sample_thermal_ensemble(T, on_beam, rb, 10_000, seed=3)
    # pooled over the three axes: relative noise sqrt(2/(3n)) ~ 0.8%
    ke = 0.5 * rb.mass * (ens.velocities**2).mean()
    assert ke == pytest.approx(0.5 * csts.k * T, rel=0.02)
    fr, _ = trap_frequencies(rb, on_beam)
    var_r = csts.k * T / (rb.mass * (2 * np.pi * fr) ** 2)
    np.testing.assert_allclose(ens.positions[:, :2].var(axis=0), var_r, rtol=0.03)


def test_thermal_ensemble_limits(rb, on_beam):
    ens = sample_thermal_ensemble(0.0, on_beam, rb, 10, seed=1)
    assert np.all(ens.positions == 0) and np.all(ens.velocities == 0)
    with pytest.raises(ValueError):
        sample_thermal_ensemble(10e-3, on_beam, rb, 10)


def test_static_energy_conservation(rb, on_beam):
    wf = ChopWaveform(2e6, 1.0)
    dt = max_time_step(wf, rb, on_beam)
    assert static_energy_drift(rb, on_beam, dt, n_steps=100_000) < 1e-6


def test_static_trajectory_energy_over_1ms(rb, on_beam):
    wf = ChopWaveform(2e6, 1.0)
    cfg = TrajectoryConfig(max_time_step(wf, rb, on_beam), 1e-3, background_gas_rate=0)
    s0 = AtomState([on_beam.waist_w0 / 5, 0, on_beam.rayleigh_range / 5], [0, 0.05, 0])
    tr = integrate_trajectory(s0, wf, on_beam, rb, cfg, record_every=10)
    from fibertweezer.chop import potential_energy
    e = 0.5 * rb.mass * (tr.velocities**2).sum(axis=1) + potential_energy(rb, on_beam, tr.positions)
    depth = -potential_energy(rb, on_beam, np.zeros((1, 3)))[0]
    m = len(e) // 10
    assert abs(e[-m:].mean() - e[:m].mean()) / depth < 1e-6
    assert tr.final.alive


def test_oversized_step_rejected(rb, on_beam):
    wf = ChopWaveform(2e6, 0.5)
    cfg = TrajectoryConfig(1e-7, 1e-4)
    with pytest.raises(ConfigurationError):
        integrate_trajectory(AtomState([0, 0, 0], [0, 0, 0]), wf, on_beam, rb, cfg)


def test_identical_inputs_bit_identical(rb, on_beam):
    wf = ChopWaveform(1e6, 0.5)
    cfg = TrajectoryConfig(max_time_step(wf, rb, on_beam), 1e-3, background_gas_rate=0)
    a = sample_thermal_ensemble(300e-6, on_beam, rb, 40, seed=9)
    b = sample_thermal_ensemble(300e-6, on_beam, rb, 40, seed=9)
    assert np.array_equal(a.positions, b.positions)
    la = ensemble_loss_times(a, wf, on_beam, rb, cfg, jobs=1)
    lb = ensemble_loss_times(b, wf, on_beam, rb, cfg, jobs=3)
    assert np.array_equal(la, lb)


def test_survival_static_trap_no_gas(rb, on_beam):
    ens = sample_thermal_ensemble(100e-6, on_beam, rb, 100, seed=5)
    wf = ChopWaveform(2e6, 1.0)
    cfg = TrajectoryConfig(max_time_step(wf, rb, on_beam), 2e-3, background_gas_rate=0)
    curve = survival_curve(ens, wf, on_beam, rb, cfg)
    assert np.all(curve.fraction == 1.0)


def test_gas_limited_lifetime(rb, on_beam):
    # no dynamical loss: the curve is the analytic exponential, fitted tau = 1 / rate
    t = np.linspace(0, 10e-3, 101)
    n = 500
    curve = survival_curve(Ensemble(np.zeros((n, 3)), np.zeros((n, 3))), ChopWaveform(2e6, 1.0),
                           on_beam, rb, TrajectoryConfig(1e-8, 10e-3),
                           loss_times=np.full(n, np.inf))
    assert np.all(np.diff(curve.fraction) <= 0)
    pt = fit_lifetime(curve)
    assert pt.ok and pt.lifetime == pytest.approx(0.4, rel=0.05)


def test_lifetime_fit_failure_is_reported():
    curve = SurvivalCurve(np.linspace(0, 1, 11), np.r_[1.0, np.zeros(10)], 100, 1e5)
    pt = fit_lifetime(curve)
    assert not pt.ok and np.isnan(pt.lifetime)


def test_fast_chop_survives(chop_loss_10ms):
    assert np.isinf(chop_loss_10ms[2e6]).mean() > 0.95


def test_slow_chop_loses_atoms(chop_loss_10ms):
    assert np.isinf(chop_loss_10ms[0.1e6]).mean() < 0.5


def test_survival_non_decreasing_in_frequency(chop_loss_10ms):
    # non-strict ordering over [300 kHz, 2 MHz] within a one-sided 95% margin
    freqs = [0.3e6, 0.6e6, 1e6, 2e6]
    s = [np.isinf(chop_loss_10ms[f]).mean() for f in freqs]
    n = len(chop_loss_10ms[2e6])
    for lo, hi in zip(s, s[1:]):
        se = np.sqrt((lo * (1 - lo) + hi * (1 - hi)) / n) + 1e-12
        assert hi - lo > -1.645 * se


def test_survival_ordering_at_50ms(rb, on_beam):
    ens = sample_thermal_ensemble(100e-6, on_beam, rb, 100, seed=77)
    cfg = TrajectoryConfig(1e-8, 50e-3, background_gas_rate=2.5)
    pts, curves = lifetime_vs_chop([0.6e6, 1e6, 2e6], ens, on_beam, rb, cfg, return_curves=True)
    s = [c.fraction[-1] for c in curves]
    assert s[0] <= s[1] + 0.05 and s[1] <= s[2] + 0.05
    # with no dynamical loss at 2 MHz the plateau is the gas-limited lifetime
    assert pts[-1].ok and pts[-1].lifetime == pytest.approx(0.4, rel=0.05)


def _small_orbit(on_beam):
    return AtomState([on_beam.waist_w0 / 50, 0, on_beam.rayleigh_range / 50], [0, 0, 0])


@pytest.mark.parametrize("duty,freq,expected,tol", [
    (1.0, 2e6, 167e3, 0.02),
    (0.5, 4e6, 118e3, 0.03),
    (0.25, 8e6, 83.5e3, 0.03),
])
def test_secular_frequency(rb, on_beam, duty, freq, expected, tol):
    wf = ChopWaveform(freq, duty)
    cfg = TrajectoryConfig(max_time_step(wf, rb, on_beam), 1e-3, background_gas_rate=0)
    tr = integrate_trajectory(_small_orbit(on_beam), wf, on_beam, rb, cfg, record_every=1)
    assert secular_frequency(tr) == pytest.approx(expected, rel=tol)


def test_secular_frequency_needs_signal(rb, on_beam):
    wf = ChopWaveform(2e6, 1.0)
    cfg = TrajectoryConfig(max_time_step(wf, rb, on_beam), 1e-4, background_gas_rate=0)
    tr = integrate_trajectory(AtomState([0, 0, 0], [0, 0, 0]), wf, on_beam, rb, cfg, record_every=1)
    with pytest.raises(EstimationError):
        secular_frequency(tr)


def test_csv_outputs(tmp_path):
    from fibertweezer.chop import LifetimePoint
    lifetimes_to_csv([LifetimePoint(2e6, 0.4, 0.01)], tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "frequency_Hz,lifetime_s,fit_error_s,ok"
    survival_to_csv([SurvivalCurve(np.array([0.0, 1.0]), np.array([1.0, 0.5]), 10, 1e6)],
                    tmp_path / "s.csv")
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 3
