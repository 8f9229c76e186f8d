"""
Hanbury-Brown-Twiss measurement of the emitted photons
======================================================

"""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fibertweezer import rubidium87
from fibertweezer.emitter import (PulseChain, calibrate_pi_pulse, emission_time_distribution,
                                  jump_monte_carlo)
from fibertweezer.photons import GateTiming, hbt_experiment, obe_overlay

gamma = 1 / rubidium87().excited_lifetime
chain = PulseChain()
omega = calibrate_pi_pulse(chain, gamma)
stats = jump_monte_carlo(chain, omega, gamma, 100_000, seed=1)

# 1e9 pulses = 500 s at 2 MHz; fewer pulses leave the zero-delay peak with a handful of counts
eta = 13500 / (2e6 * 0.999)
res = hbt_experiment(stats, GateTiming(), 1_000_000_000, eta, seed=2)
print("signal clicks/s per detector:", res.signal_rates)
print(f"raw P2 {res.raw.value:.4f} +- {res.raw.error:.4f}")
print(f"corrected P2 {res.corrected.value:.4f} +- {res.corrected.error:.4f}")

n = stats.counts.astype(float)
p2_model = 0.5 * (n * (n - 1)).mean() / n.mean() ** 2
dens = emission_time_distribution(chain, omega, gamma)
h = res.normalized
model = obe_overlay(dens.times, dens.density, 500e-9, h.bin_width, h.max_index, p2_model)

fig, ax = plt.subplots(figsize=(7, 3))
ax.plot(h.centers * 1e6, h.counts, "r.", ms=2)
ax.plot(h.centers * 1e6, model, "k", lw=0.7)
ax.set_xlabel("delay (us)")
ax.set_ylabel("normalized coincidences")
fig.tight_layout()
fig.savefig("figures/05_g2.png", dpi=120)
