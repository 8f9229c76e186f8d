"""
Trap depth and oscillation frequencies of the fiber tweezer
===========================================================

"""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fibertweezer import (dipole_potential, rubidium87, trap_depth, trap_frequencies,
                          tweezer_geometry)

rb = rubidium87()

# the trap light is chopped at 50% duty, so 6.9 mW average means 13.8 mW while on
avg = tweezer_geometry(6.9e-3)
on = tweezer_geometry(13.8e-3)
print("Rayleigh range (um):", on.rayleigh_range * 1e6)
print("depth at 6.9 mW (mK):", trap_depth(rb, avg) * 1e3)
f_r, f_z = trap_frequencies(rb, on)
print("radial / axial frequency at 13.8 mW (kHz):", f_r / 1e3, f_z / 1e3)

# depth is linear in power
powers = np.linspace(1e-3, 20e-3, 40)
depth = np.array([trap_depth(rb, tweezer_geometry(p)) for p in powers]) * 1e3
print("mK per mW:", np.polyfit(powers * 1e3, depth, 1)[0])

# potential cuts through the focus
r = np.linspace(-3e-6, 3e-6, 301)
z = np.linspace(-20e-6, 20e-6, 301)
from scipy import constants
u_r = dipole_potential(rb, on, np.abs(r), 0.0) / constants.k * 1e3
u_z = dipole_potential(rb, on, 0.0, z) / constants.k * 1e3

fig, ax = plt.subplots(1, 2, figsize=(8, 3))
ax[0].plot(r * 1e6, u_r)
ax[0].set_xlabel("r (um)")
ax[0].set_ylabel("U (mK)")
ax[1].plot(z * 1e6, u_z)
ax[1].set_xlabel("z (um)")
fig.tight_layout()
fig.savefig("figures/01_potential.png", dpi=120)
