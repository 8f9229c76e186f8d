"""
Timing sequence and photon budget
=================================

"""
from dataclasses import replace

import numpy as np

from fibertweezer import rubidium87
from fibertweezer.budget import (PhaseProgram, TimingSequence, average_flux, budget_report,
                                 collection_efficiency, validate_sequence)

seq = TimingSequence()
print("violations:", validate_sequence(seq))
print("late pulse:", [str(v) for v in validate_sequence(replace(seq, pulse_time=260e-9))])

eta = collection_efficiency(13500, seq.pulse_rate, 0.999)
rep = budget_report(seq, PhaseProgram(), eta, 0.999, rubidium87().natural_linewidth_hz, 170.0)
print(rep.to_json())

# renewal cycle: generation phase, then a short verify or a full reload
for p in np.linspace(0, 1, 6):
    print(f"survival {p:.1f}: {average_flux(13500, PhaseProgram().with_survival(p)):7.1f} /s")
