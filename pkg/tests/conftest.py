import json
from pathlib import Path

import numpy as np
import pytest

from fibertweezer import rubidium87, tweezer_geometry
from fibertweezer.emitter import PulseChain, calibrate_pi_pulse, jump_monte_carlo

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


@pytest.fixture(scope="session")
def rb():
    return rubidium87()


@pytest.fixture(scope="session")
def gamma(rb):
    return 1 / rb.excited_lifetime


@pytest.fixture(scope="session")
def on_beam():
    return tweezer_geometry(13.8e-3)


@pytest.fixture(scope="session")
def avg_beam():
    return tweezer_geometry(6.9e-3)


@pytest.fixture(scope="session")
def chain():
    return PulseChain()


@pytest.fixture(scope="session")
def omega_full(chain, gamma):
    return calibrate_pi_pulse(chain, gamma)


@pytest.fixture(scope="session")
def omega_clean(chain, gamma):
    return calibrate_pi_pulse(chain.without_leakage(), gamma)


@pytest.fixture(scope="session")
def stats_full(chain, omega_full, gamma):
    ck = np.linspace(chain.aom_open_time, 240e-9, 20)
    return jump_monte_carlo(chain, omega_full, gamma, 100_000, seed=11, checkpoints=ck)


@pytest.fixture(scope="session")
def stats_clean(chain, omega_clean, gamma):
    return jump_monte_carlo(chain.without_leakage(), omega_clean, gamma, 100_000, seed=12)


ORDER_FREQS = (0.1e6, 0.3e6, 0.6e6, 1e6, 2e6)


@pytest.fixture(scope="session")
def chop_ensemble(rb, on_beam):
    from fibertweezer.chop import sample_thermal_ensemble
    return sample_thermal_ensemble(100e-6, on_beam, rb, 500, seed=2024)


@pytest.fixture(scope="session")
def chop_loss_10ms(rb, on_beam, chop_ensemble):
    """Dynamical loss times at 10 ms for each chop frequency (shared by several tests)."""
    from fibertweezer.chop import ChopWaveform, TrajectoryConfig, ensemble_loss_times, max_time_step
    out = {}
    for f in ORDER_FREQS:
        wf = ChopWaveform(f, 0.5)
        cfg = TrajectoryConfig(max_time_step(wf, rb, on_beam), 10e-3, background_gas_rate=0.0)
        out[f] = ensemble_loss_times(chop_ensemble, wf, on_beam, rb, cfg)
    return out


HBT_PULSES = 1_000_000_000
COLLECTION = 13500 / (2e6 * 0.999)


@pytest.fixture(scope="session")
def hbt_default(stats_full):
    from fibertweezer.photons import GateTiming, hbt_experiment
    return hbt_experiment(stats_full, GateTiming(), HBT_PULSES, COLLECTION, seed=21)


def synthetic_stats(p1, p2, n_traj=20_000, seed=0, tau=26.2348e-9, t_exc=49e-9):
    """Emission statistics with an exactly known photon-number distribution."""
    from fibertweezer.emitter import EmissionStatistics
    rng = np.random.default_rng(seed)
    n1, n2 = int(round(p1 * n_traj)), int(round(p2 * n_traj))
    counts = np.zeros(n_traj, np.int64)
    counts[:n1] = 1
    counts[n1:n1 + n2] = 2
    traj = np.repeat(np.arange(n_traj), counts)
    t = t_exc + rng.exponential(tau, len(traj))
    t = np.minimum(t, 224e-9)
    return EmissionStatistics(1 - (n1 + n2) / n_traj, n1 / n_traj, n2 / n_traj, float(t.mean()),
                              t, traj, counts, n_traj)
