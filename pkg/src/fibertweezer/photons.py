"""Detector click streams and Hanbury-Brown-Twiss g2 analysis.

Timestamps are integer picoseconds, so histogramming is exact and
independent of the algorithm that enumerates the pairs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np

from .emitter import EmissionStatistics

PS = 1e-12
RECORD_DTYPE = np.dtype([("detector", "u1"), ("time_ps", "<u8")])


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 1.0
    dark_rate: float = 125.0
    time_jitter: float = 0.35e-9

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.dark_rate < 0 or self.time_jitter < 0:
            raise ValueError("dark rate and jitter must be non-negative")


@dataclass(frozen=True)
class GateTiming:
    """Pulse period and detection gate (relative to the start of each period)."""

    period: float = 500e-9
    gate_open: float = 25e-9
    gate_length: float = 200e-9

    def __post_init__(self):
        if self.period <= 0 or self.gate_length <= 0 or self.gate_open < 0:
            raise ValueError("invalid gate timing")
        if self.gate_open + self.gate_length > self.period:
            raise ValueError("gate extends beyond the period")

    @property
    def duty(self) -> float:
        return self.gate_length / self.period


@dataclass
class TimestampStream:
    detector_id: int
    times: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        if self.times.ndim != 1:
            raise ValueError("times must be 1-D")
        if len(self.times) > 1 and np.any(np.diff(self.times) < 0):
            raise ValueError("timestamps must be sorted")

    def __len__(self):
        return len(self.times)

    @property
    def seconds(self) -> np.ndarray:
        return self.times * PS


def write_binary(streams: list[TimestampStream], path) -> None:
    """Little-endian records: detector id (u8), time in ps (u64), sorted by time."""
    ids = np.concatenate([np.full(len(s), s.detector_id, np.uint8) for s in streams])
    ts = np.concatenate([s.times for s in streams])
    order = np.argsort(ts, kind="stable")
    rec = np.empty(len(ts), RECORD_DTYPE)
    rec["detector"] = ids[order]
    rec["time_ps"] = ts[order]
    rec.tofile(path)


def read_binary(path) -> dict[int, TimestampStream]:
    rec = np.fromfile(path, RECORD_DTYPE)
    return _split(rec["detector"], rec["time_ps"].astype(np.int64))


def write_csv(streams: list[TimestampStream], path) -> None:
    ids = np.concatenate([np.full(len(s), s.detector_id) for s in streams])
    ts = np.concatenate([s.times for s in streams])
    order = np.argsort(ts, kind="stable")
    with open(path, "w") as fh:
        fh.write("detector_id,time_ps\n")
        for i, t in zip(ids[order], ts[order]):
            fh.write(f"{i},{t}\n")


def read_csv(path) -> dict[int, TimestampStream]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    return _split(data[:, 0], data[:, 1])


def _split(ids, ts):
    return {int(d): TimestampStream(int(d), np.sort(ts[ids == d])) for d in np.unique(ids)}


def generate_streams(stats: EmissionStatistics, timing: GateTiming, n_pulses: int,
                     collection_efficiency: float,
                     detectors: tuple[DetectorModel, DetectorModel] = (DetectorModel(), DetectorModel()),
                     splitter_ratio: float = 0.5, seed=0) -> tuple[TimestampStream, TimestampStream]:
    """Clicks of two detectors behind a beam splitter for ``n_pulses`` excitations.

    Each pulse replays a randomly chosen trajectory from ``stats``; only its
    emissions inside the detection gate can be detected. A photon reaches
    detector 1 with probability eta*r*e1 and detector 2 with eta*(1-r)*e2.
    Only pulses with at least one click are materialized, so the cost
    scales with the number of clicks rather than the number of pulses.
    Dark counts are Poisson, uniform over the open gates.
    """
    if n_pulses < 1:
        raise ValueError("need at least one pulse")
    rng = np.random.default_rng(seed)
    q1 = collection_efficiency * splitter_ratio * detectors[0].efficiency
    q2 = collection_efficiency * (1 - splitter_ratio) * detectors[1].efficiency
    q = q1 + q2
    g0, g1 = timing.gate_open, timing.gate_open + timing.gate_length

    inside = (stats.jump_times >= g0) & (stats.jump_times < g1)
    jt, jtraj = stats.jump_times[inside], stats.jump_traj[inside]
    order = np.argsort(jtraj, kind="stable")
    jt, jtraj = jt[order], jtraj[order]
    counts = np.bincount(jtraj, minlength=stats.n_traj)
    first = np.concatenate([[0], np.cumsum(counts)])

    click_pulse, click_time, click_det = [], [], []
    if q > 0:
        kmax = int(counts.max())
        p_k = np.bincount(counts, minlength=kmax + 1) / stats.n_traj
        m_k = rng.multinomial(n_pulses, p_k)
        d_k = np.array([rng.binomial(m_k[k], 1 - (1 - q) ** k) if k else 0
                        for k in range(kmax + 1)])
        n_active = int(d_k.sum())
        active = _distinct_indices(rng, n_pulses, n_active)
        start = 0
        for k in range(1, kmax + 1):
            if d_k[k] == 0:
                continue
            pulses = active[start:start + d_k[k]]
            start += d_k[k]
            pool = np.flatnonzero(counts == k)
            traj = pool[rng.integers(0, len(pool), d_k[k])]
            times = jt[first[traj][:, None] + np.arange(k)[None, :]]
            # outcome per photon: 0 lost, 1 detector 1, 2 detector 2; at least one click
            out = _draw_outcomes(rng, (d_k[k], k), q1, q2)
            hit = out > 0
            click_pulse.append(np.broadcast_to(pulses[:, None], out.shape)[hit])
            click_time.append(times[hit])
            click_det.append(out[hit])
    if click_pulse:
        cp = np.concatenate(click_pulse)
        ct = np.concatenate(click_time)
        cd = np.concatenate(click_det)
    else:
        cp, ct, cd = np.empty(0, np.int64), np.empty(0), np.empty(0, np.int64)

    streams = []
    for d, det in enumerate(detectors, start=1):
        sel = cd == d
        jitter = rng.normal(0.0, det.time_jitter, sel.sum()) if det.time_jitter > 0 else 0.0
        t_sig = _to_ps(cp[sel], ct[sel] + jitter, timing.period)
        n_dark = rng.poisson(det.dark_rate * timing.gate_length * n_pulses)
        dark_pulse = rng.integers(0, n_pulses, n_dark)
        dark_time = g0 + timing.gate_length * rng.random(n_dark)
        t_dark = _to_ps(dark_pulse, dark_time, timing.period)
        streams.append(TimestampStream(d - 1, np.sort(np.concatenate([t_sig, t_dark]))))
    return streams[0], streams[1]


def _to_ps(pulse, t, period):
    period_ps = int(round(period / PS))
    return np.asarray(pulse, np.int64) * period_ps + np.round(np.asarray(t) / PS).astype(np.int64)


def _distinct_indices(rng, n, k):
    """``k`` distinct integers from [0, n) in random order."""
    if k == 0:
        return np.empty(0, np.int64)
    if k > n // 4:
        return rng.permutation(n)[:k]
    out = np.unique(rng.integers(0, n, int(k * 1.1) + 16))
    while len(out) < k:
        out = np.unique(np.concatenate([out, rng.integers(0, n, k - len(out) + 16)]))
    return rng.permutation(rng.choice(out, k, replace=False))


def _draw_outcomes(rng, shape, q1, q2):
    out = np.zeros(shape, np.int64)
    todo = np.arange(shape[0])
    while len(todo):
        u = rng.random((len(todo), shape[1]))
        o = np.where(u < q1, 1, np.where(u < q1 + q2, 2, 0))
        ok = (o > 0).any(axis=1)
        out[todo[ok]] = o[ok]
        todo = todo[~ok]
    return out


@dataclass
class G2Histogram:
    """Coincidences vs delay t2 - t1; bin j is centered on j * bin_width."""

    bin_width: float
    max_index: int
    counts: np.ndarray
    normalization: float = 1.0

    @property
    def centers(self) -> np.ndarray:
        return np.arange(-self.max_index, self.max_index + 1) * self.bin_width

    @property
    def delay_range(self) -> float:
        return (self.max_index + 0.5) * self.bin_width

    @property
    def normalized(self) -> np.ndarray:
        return self.counts / self.normalization

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("delay_ns,counts,normalized\n")
            for d, c, n in zip(self.centers * 1e9, self.counts, self.normalized):
                fh.write(f"{d:.4f},{c:.10g},{n:.10g}\n")


def _bin_index(delay_ps, width_ps):
    # symmetric rounding: ties move away from zero on both sides
    mag = (2 * np.abs(delay_ps) + width_ps) // (2 * width_ps)
    return np.sign(delay_ps) * mag


def _hist_params(bin_width, delay_range):
    w = int(round(bin_width / PS))
    J = int(np.floor(delay_range / bin_width + 1e-9))
    return w, J


def cross_correlate(s1: TimestampStream, s2: TimestampStream, bin_width: float = 8e-9,
                    delay_range: float = 5.75e-6) -> G2Histogram:
    """Histogram of all delays t2 - t1 with bin centers up to ``delay_range``.

    Sort-merge: for each click on detector 1 the partner window on detector
    2 is located by binary search, so the work is O(N log N + pairs).
    """
    if len(s1) == 0 or len(s2) == 0:
        raise ValueError("empty stream")
    w, J = _hist_params(bin_width, delay_range)
    reach = (J + 1) * w
    a, b = s1.times, s2.times
    if a[-1] + reach < b[0] or b[-1] + reach < a[0]:
        raise ValueError("streams do not overlap in time")
    lo = np.searchsorted(b, a - reach, side="left")
    hi = np.searchsorted(b, a + reach, side="right")
    n = hi - lo
    total = int(n.sum())
    counts = np.zeros(2 * J + 1, np.int64)
    if total:
        i1 = np.repeat(np.arange(len(a)), n)
        offs = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
        d = b[np.repeat(lo, n) + offs] - a[i1]
        j = _bin_index(d, w)
        keep = np.abs(j) <= J
        counts = np.bincount(j[keep] + J, minlength=2 * J + 1)
    return G2Histogram(bin_width, J, counts.astype(float))


def cross_correlate_bruteforce(s1: TimestampStream, s2: TimestampStream, bin_width: float = 8e-9,
                               delay_range: float = 5.75e-6) -> G2Histogram:
    """All-pairs reference implementation for small streams."""
    w, J = _hist_params(bin_width, delay_range)
    d = (s2.times[None, :] - s1.times[:, None]).ravel()
    j = _bin_index(d, w)
    j = j[np.abs(j) <= J]
    counts = np.zeros(2 * J + 1)
    for v in j:
        counts[v + J] += 1
    return G2Histogram(bin_width, J, counts)


def peak_areas(hist: G2Histogram, period: float = 500e-9, half_width: float | None = None,
               shift: float = 0.0, min_side: int = 5) -> dict[int, float]:
    """Counts summed over windows centred on k * period (+ ``shift``).

    A bin straddling a window edge contributes the fraction of its width
    inside the window, so flat input gives equal areas even when the period
    is not a whole number of bins. The default half-width of half a period
    partitions the delay axis.
    """
    hw = period / 2 if half_width is None else half_width
    if hw > period / 2 * (1 + 1e-12):
        raise ValueError("peak windows overlap")
    c = hist.centers
    k_max = int(np.floor((hist.delay_range - hw - abs(shift)) / period + 1e-9))
    if k_max < min_side:
        raise ValueError(f"delay range covers only {k_max} side peaks per side (< {min_side})")
    areas = {}
    for k in range(-k_max, k_max + 1):
        rel = c - (k * period + shift)
        w = hist.bin_width
        frac = np.clip(np.minimum(rel + w / 2, hw) - np.maximum(rel - w / 2, -hw), 0, None) / w
        areas[k] = float(np.dot(hist.counts, frac))
    return areas


@dataclass
class P2Estimate:
    value: float
    error: float
    zero_area: float
    side_mean: float
    n_side: int

    def as_dict(self) -> dict:
        return {"p2": self.value, "error": self.error, "zero_area": self.zero_area,
                "side_mean": self.side_mean, "n_side": self.n_side}


def two_photon_probability(source, period: float = 500e-9, n_side: int | None = None) -> P2Estimate:
    """Half the zero-delay peak area over the mean side-peak area.

    ``source`` is a :class:`G2Histogram` or a ``{k: area}`` map. Errors
    propagate Poisson counting noise of both areas.
    """
    areas = peak_areas(source, period) if isinstance(source, G2Histogram) else dict(source)
    side_keys = [k for k in areas if k != 0]
    if n_side is not None:
        side_keys = [k for k in side_keys if abs(k) <= n_side]
    if len(side_keys) < 4:
        raise ValueError("need at least 4 side peaks")
    side = np.array([areas[k] for k in side_keys])
    a0 = areas[0]
    mean = side.mean()
    if mean <= 0:
        raise ValueError("side peaks are empty")
    p2 = 0.5 * a0 / mean
    rel = np.sqrt(1 / max(a0, 1.0) + 1 / side.sum())
    err = 0.5 * np.sqrt(max(a0, 1.0)) / mean if a0 == 0 else p2 * rel
    return P2Estimate(float(p2), float(err), a0, float(mean), len(side))


@dataclass
class CorrectedP2:
    value: float
    error: float
    raw: float
    accidental_area: float
    side_area: float
    clamped: bool
    formula: str = ("P2 = (A0 - acc) / (2 * A_side); acc = G*(s1*d2 + d1*s2 + d1*d2), "
                    "s_i = signal clicks per period, d_i = dark clicks per gate, G = gates")

    def as_dict(self) -> dict:
        return {"p2": self.value, "error": self.error, "raw": self.raw,
                "accidental_area": self.accidental_area, "side_area": self.side_area,
                "clamped": self.clamped, "formula": self.formula}


def background_correction(p2_raw: float, dark_rates, signal_rates, gate_duty: float,
                          total_time: float, period: float = 500e-9,
                          side_area: float | None = None, p2_error: float = 0.0) -> CorrectedP2:
    """Remove accidental signal-dark and dark-dark coincidences from the zero peak.

    ``dark_rates`` are in-gate detector dark rates (1/s); ``signal_rates``
    are time-averaged signal click rates (1/s) per detector.
    """
    d1, d2 = (r * gate_duty * period for r in dark_rates)
    s1, s2 = (r * period for r in signal_rates)
    gates = total_time / period
    acc = gates * (s1 * d2 + d1 * s2 + d1 * d2)
    side = gates * (s1 + d1) * (s2 + d2) if side_area is None else side_area
    if side <= 0:
        raise ValueError("side-peak area must be positive")
    value = p2_raw - acc / (2 * side)
    clamped = value < 0
    return CorrectedP2(max(value, 0.0), p2_error, p2_raw, acc, side, clamped)


def side_peak_height(hist: G2Histogram, period: float = 500e-9) -> float:
    """Mean side-peak height: the histogram linearly interpolated at k * period."""
    k_max = int(np.floor(hist.delay_range / period - 0.5))
    ks = [k for k in range(-k_max, k_max + 1) if k != 0]
    if not ks:
        raise ValueError("no side peaks in range")
    return float(np.interp(np.array(ks) * period, hist.centers, hist.counts).mean())


def normalize_histogram(hist: G2Histogram, period: float = 500e-9) -> G2Histogram:
    """Scale the counts so the mean side-peak height is one."""
    scale = side_peak_height(hist, period)
    if scale <= 0:
        raise ValueError("side peaks are empty")
    return G2Histogram(hist.bin_width, hist.max_index, hist.counts / scale, 1.0)


def obe_overlay(density_t, density, period: float, bin_width: float, max_index: int,
                p2: float, scale: float = 1.0) -> np.ndarray:
    """Model g2 curve from the emission-time density, on the measured binning.

    Side peaks are the autocorrelation of the single-pulse emission-time
    density; the zero peak is the same shape scaled by 2 * p2. The curve is
    averaged over each bin and normalized like the data, so its mean
    side-peak height is ``scale``.
    """
    dt = density_t[1] - density_t[0]
    p = density / density.sum()
    auto = np.correlate(p, p, mode="full")
    lags = (np.arange(len(auto)) - (len(p) - 1)) * dt
    # cumulative integral gives exact bin averages of the piecewise-linear curve
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (auto[1:] + auto[:-1]) * dt)])
    centers = np.arange(-max_index, max_index + 1) * bin_width
    lo, hi = centers - bin_width / 2, centers + bin_width / 2
    out = np.zeros_like(centers)
    k_max = int(np.ceil(hi[-1] / period)) + 1
    for k in range(-k_max, k_max + 1):
        amp = 2 * p2 if k == 0 else 1.0
        a = np.interp(lo - k * period, lags, cum, left=0, right=cum[-1])
        b = np.interp(hi - k * period, lags, cum, left=0, right=cum[-1])
        out += amp * (b - a) / bin_width
    model = G2Histogram(bin_width, max_index, out)
    return scale * out / side_peak_height(model, period)


def write_report(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


@dataclass
class HbtResult:
    streams: tuple[TimestampStream, TimestampStream]
    histogram: G2Histogram
    normalized: G2Histogram
    raw: P2Estimate
    corrected: CorrectedP2
    signal_rates: tuple[float, float]
    total_time: float

    def report(self) -> dict:
        return {"raw": self.raw.as_dict(), "corrected": self.corrected.as_dict(),
                "signal_rates_per_s": list(self.signal_rates),
                "total_time_s": self.total_time,
                "clicks": [len(s) for s in self.streams]}


def hbt_experiment(stats: EmissionStatistics, timing: GateTiming, n_pulses: int,
                   collection_efficiency: float,
                   detectors: tuple[DetectorModel, DetectorModel] = (DetectorModel(), DetectorModel()),
                   splitter_ratio: float = 0.5, bin_width: float = 8e-9,
                   delay_range: float = 5.75e-6, seed=0) -> HbtResult:
    """Streams, g2 histogram, raw and dark-corrected P2 in one call.

    Signal click rates for the correction are the measured click rates
    minus the expected gated dark rate.
    """
    s1, s2 = generate_streams(stats, timing, n_pulses, collection_efficiency, detectors,
                              splitter_ratio, seed)
    hist = cross_correlate(s1, s2, bin_width, delay_range)
    raw = two_photon_probability(hist, timing.period)
    total = n_pulses * timing.period
    signal = tuple(max(len(s) / total - d.dark_rate * timing.duty, 0.0)
                   for s, d in zip((s1, s2), detectors))
    corr = background_correction(raw.value, [d.dark_rate for d in detectors], signal,
                                 timing.duty, total, timing.period, side_area=raw.side_mean,
                                 p2_error=raw.error)
    norm = normalize_histogram(hist, timing.period)
    hist.normalization = side_peak_height(hist, timing.period)
    return HbtResult((s1, s2), hist, norm, raw, corr, signal, total)
