"""
Pi-pulse excitation and photon-number statistics
================================================

"""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fibertweezer import rubidium87
from fibertweezer.emitter import (GROUND, PulseChain, calibrate_pi_pulse,
                                  emission_time_distribution, evolve_obe, jump_monte_carlo,
                                  post_pulse_excitation, pulse_duration_constraints,
                                  single_photon_window_probability)

gamma = 1 / rubidium87().excited_lifetime
full = PulseChain()
clean = full.without_leakage()

for name, chain in [("pulse only", clean), ("with EOM leakage", full)]:
    omega = calibrate_pi_pulse(chain, gamma)
    stats = jump_monte_carlo(chain, omega, gamma, 50_000, seed=1)
    print(f"{name}: Omega/2pi = {omega / 2 / np.pi / 1e6:.1f} MHz, "
          f"rho_ee after pulse {post_pulse_excitation(chain, omega, gamma):.3f}, "
          f"window probability {single_photon_window_probability(chain, gamma, omega):.5f}, "
          f"p2 {stats.p2plus:.4f} +- {stats.p2_stderr:.4f}")

print(pulse_duration_constraints(3.5e-9, gamma, 267e6))

omega = calibrate_pi_pulse(full, gamma)
tr = evolve_obe(GROUND, full, omega, gamma, 0.0, (0.0, 250e-9))
dens = emission_time_distribution(full, omega, gamma)

fig, ax = plt.subplots(1, 2, figsize=(9, 3))
ax[0].plot(tr.times * 1e9, tr.rho_ee)
ax[0].set_xlabel("t (ns)")
ax[0].set_ylabel("excited population")
ax[1].semilogy(dens.times * 1e9, dens.density * 1e-9)
ax[1].set_xlabel("t (ns)")
ax[1].set_ylabel("emission density (1/ns)")
fig.tight_layout()
fig.savefig("figures/04_emitter.png", dpi=120)
