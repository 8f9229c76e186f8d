"""
Single-atom telegraph signal and its count histogram
====================================================

"""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fibertweezer.telegraph import (OccupancyModel, atom_threshold, bin_classes, dwell_lifetime,
                                    fit_compound_poisson, simulate_occupancy,
                                    trace_from_occupancy)

b, s, bin_width = 2100.0, 5900.0, 10e-3

# blockaded loading: at most one atom
path = simulate_occupancy(OccupancyModel(0.5, 2.5), 3850.0, seed=1)
trace = trace_from_occupancy(path, b, s, bin_width, seed=2)
fit = fit_compound_poisson(trace.histogram(), k_max=2, bin_width=bin_width, transitions=True)
frac, changed = bin_classes(path, bin_width, 2)
print("fit weights:", fit.model.weights, "transition:", fit.model.transition_weight)
print("generator bin fractions:", frac, "changed:", changed)
print("b, s:", fit.model.background_rate, fit.model.single_atom_rate)

thr = atom_threshold(b, s, bin_width)
print("threshold:", thr.value, "misclassification:", thr.error)
# a second atom arriving also empties the trap, so the exit rate is loss + loading
est = dwell_lifetime(trace, thr.value)
print(f"occupied lifetime {est.tau * 1e3:.0f} ms [{est.ci_low * 1e3:.0f}, {est.ci_high * 1e3:.0f}]")

# without blockade and faster loading pairs appear
free = simulate_occupancy(OccupancyModel(2.5, 2.5, blockade=False), 1000.0, seed=3)
tr2 = trace_from_occupancy(free, b, s, bin_width, seed=4)
fit2 = fit_compound_poisson(tr2.histogram(), k_max=4, bin_width=bin_width, transitions=True)
print("no blockade w2:", fit2.model.weights[2])

x = np.arange(0, 200)
fig, ax = plt.subplots(1, 2, figsize=(9, 3))
sel = trace.bin_starts < 60
ax[0].step(trace.bin_starts[sel], trace.counts[sel], lw=0.5)
ax[0].set_xlabel("time (s)")
ax[0].set_ylabel("counts / 10 ms")
counts = np.bincount(trace.counts, minlength=len(x))[: len(x)]
ax[1].bar(x, counts, width=1, color="0.7")
ax[1].plot(x, fit.model.pmf(x) * len(trace.counts), "k")
ax[1].set_yscale("log")
ax[1].set_xlabel("counts / 10 ms")
fig.tight_layout()
fig.savefig("figures/03_telegraph.png", dpi=120)
