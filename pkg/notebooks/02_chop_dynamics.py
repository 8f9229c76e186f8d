"""
Atom survival in a chopped trap
===============================

Classical trajectories in a square-wave modulated Gaussian potential. No
cooling is modelled, so only the low-frequency loss and the gas-limited
plateau are meaningful.
"""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fibertweezer import rubidium87, trap_frequencies, tweezer_geometry
from fibertweezer.chop import (AtomState, ChopWaveform, TrajectoryConfig, integrate_trajectory,
                               lifetime_vs_chop, max_time_step, sample_thermal_ensemble,
                               secular_frequency)

rb = rubidium87()
beam = tweezer_geometry(13.8e-3)
f_static, _ = trap_frequencies(rb, beam)

# fast chopping: the atom sees the time-averaged potential, f -> f * sqrt(duty)
start = AtomState([beam.waist_w0 / 50, 0, beam.rayleigh_range / 50], [0, 0, 0])
for duty, f_chop in [(1.0, 2e6), (0.5, 4e6), (0.25, 8e6)]:
    wf = ChopWaveform(f_chop, duty)
    cfg = TrajectoryConfig(max_time_step(wf, rb, beam), 1e-3, background_gas_rate=0)
    tr = integrate_trajectory(start, wf, beam, rb, cfg, record_every=1)
    print(f"duty {duty}: {secular_frequency(tr) / 1e3:.2f} kHz "
          f"(static x sqrt(duty) = {f_static * np.sqrt(duty) / 1e3:.2f})")

# survival vs chop frequency for a 100 uK ensemble
ens = sample_thermal_ensemble(100e-6, beam, rb, 100, seed=1)
freqs = [0.1e6, 0.3e6, 0.6e6, 1e6, 2e6]
cfg = TrajectoryConfig(1e-8, 20e-3, background_gas_rate=2.5)
points, curves = lifetime_vs_chop(freqs, ens, beam, rb, cfg, return_curves=True)
for p in points:
    print(f"{p.frequency / 1e6:4.1f} MHz  lifetime {p.lifetime * 1e3:8.1f} ms  ok={p.ok}")

fig, ax = plt.subplots(figsize=(5, 3.5))
for c in curves:
    ax.plot(c.times * 1e3, c.fraction, label=f"{c.frequency / 1e6:g} MHz")
ax.set_xlabel("time (ms)")
ax.set_ylabel("survival")
ax.legend()
fig.tight_layout()
fig.savefig("figures/02_survival.png", dpi=120)
