"""Single-atom loading as a telegraph process, binned counts, mixture fits."""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import warnings

import numpy as np
from scipy import stats
from scipy.special import gammaln


class FitError(RuntimeError):
    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


@dataclass(frozen=True)
class OccupancyModel:
    loading_rate: float
    loss_rate: float
    blockade: bool = True

    def __post_init__(self):
        if self.loading_rate < 0 or self.loss_rate < 0:
            raise ValueError("rates must be non-negative")


@dataclass
class OccupancyPath:
    """Piecewise-constant atom number: ``occupancy[i]`` holds on [times[i], times[i+1])."""

    times: np.ndarray
    occupancy: np.ndarray
    duration: float

    def value_at(self, t):
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.occupancy[np.clip(idx, 0, None)]

    def integral(self, t):
        """Occupied atom-seconds between 0 and ``t``."""
        t = np.asarray(t, dtype=float)
        edges = np.append(self.times, self.duration)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(edges) * self.occupancy)])
        return np.interp(t, edges, cum)

    def dwells(self, state: int = 1):
        """Durations of sojourns in ``state`` and whether each was cut by an edge."""
        edges = np.append(self.times, self.duration)
        lengths = np.diff(edges)
        sel = self.occupancy == state
        censored = np.zeros(len(lengths), bool)
        censored[0] = True
        censored[-1] = True
        return lengths[sel], censored[sel]


def simulate_occupancy(model: OccupancyModel, duration: float, seed=0,
                       initial: int = 0) -> OccupancyPath:
    """Gillespie simulation of the trap atom number.

    With blockade, an arrival while occupied expels both atoms, so state 1
    is left at rate ``loss_rate + loading_rate`` and always to 0. Without
    blockade the atom number is a birth-death process with per-atom loss.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    times, occ = [0.0], [initial]
    t, n = 0.0, initial
    R, g = model.loading_rate, model.loss_rate
    while True:
        if model.blockade:
            rate = R if n == 0 else R + g
        else:
            rate = R + n * g
        if rate <= 0:
            break
        t += rng.exponential(1 / rate)
        if t >= duration:
            break
        if model.blockade:
            n = 1 if n == 0 else 0
        else:
            n = n + 1 if rng.random() * rate < R else n - 1
        times.append(t)
        occ.append(n)
    return OccupancyPath(np.array(times), np.array(occ), float(duration))


@dataclass
class CountTrace:
    bin_width: float
    counts: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or len(self.counts) < 1:
            raise ValueError("a trace needs at least one bin")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def bin_starts(self):
        return self.start_time + self.bin_width * np.arange(len(self.counts))

    def histogram(self) -> dict[int, int]:
        values, n = np.unique(self.counts, return_counts=True)
        return {int(v): int(k) for v, k in zip(values, n)}

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("bin_start_s,counts\n")
            for t, c in zip(self.bin_starts, self.counts):
                fh.write(f"{t:.9g},{c}\n")

    @classmethod
    def from_csv(cls, path) -> "CountTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        starts = data[:, 0]
        width = float(starts[1] - starts[0]) if len(starts) > 1 else 1.0
        return cls(width, data[:, 1].astype(np.int64), float(starts[0]))


def trace_from_occupancy(path: OccupancyPath, background_rate: float, atom_rate: float,
                         bin_width: float, seed=0) -> CountTrace:
    """Poisson counts per bin with mean equal to the exact rate integral."""
    if background_rate < 0 or atom_rate < 0:
        raise ValueError("rates must be non-negative")
    rng = np.random.default_rng(seed)
    n_bins = int(np.floor(path.duration / bin_width + 1e-9))
    edges = bin_width * np.arange(n_bins + 1)
    occupied = np.diff(path.integral(edges))
    mean = background_rate * bin_width + atom_rate * occupied
    return CountTrace(bin_width, rng.poisson(mean), 0.0)


def histogram_to_json(hist: dict[int, int], path) -> None:
    with open(path, "w") as fh:
        json.dump({str(k): int(v) for k, v in sorted(hist.items())}, fh, indent=1)


def histogram_from_json(path) -> dict[int, int]:
    with open(path) as fh:
        return {int(k): int(v) for k, v in json.load(fh).items()}


@dataclass
class CompoundPoissonModel:
    """Mixture of Poisson laws for 0..k atoms.

    With ``transition_weight`` > 0 the model also carries bins in which the
    trap filled or emptied: their single-atom exposure is uniform in [0, 1],
    which integrates to a difference of Poisson CDFs.
    """

    weights: np.ndarray
    background_rate: float
    single_atom_rate: float
    bin_width: float
    transition_weight: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        total = self.weights.sum() + self.transition_weight
        if np.any(self.weights < -1e-12) or self.transition_weight < 0 or abs(total - 1) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        if self.single_atom_rate <= 0 or self.background_rate < 0:
            raise ValueError("need s > 0 and b >= 0")

    @property
    def means(self) -> np.ndarray:
        k = np.arange(len(self.weights))
        return (self.background_rate + k * self.single_atom_rate) * self.bin_width

    def pmf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        P, *_ = _component_terms(np.atleast_1d(x), self.background_rate * self.bin_width,
                                 self.single_atom_rate * self.bin_width, len(self.weights),
                                 self.transition_weight > 0)
        w = self._all_weights()
        return (P @ w).reshape(x.shape)

    def _all_weights(self):
        if self.transition_weight > 0:
            return np.append(self.weights, self.transition_weight)
        return self.weights


@dataclass
class FitResult:
    model: CompoundPoissonModel
    log_likelihood: float
    errors: dict = field(default_factory=dict)
    iterations: int = 0
    single_component: bool = False

    def report(self) -> dict:
        m = self.model
        return {
            "weights": m.weights.tolist(),
            "transition_weight": m.transition_weight,
            "background_rate": m.background_rate,
            "single_atom_rate": m.single_atom_rate,
            "bin_width": m.bin_width,
            "errors": self.errors,
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "single_component": self.single_component,
        }


def _as_arrays(histogram):
    if isinstance(histogram, dict):
        x = np.array(sorted(histogram), dtype=float)
        n = np.array([histogram[int(k)] for k in x], dtype=float)
    else:
        counts = np.asarray(histogram)
        x = np.arange(len(counts), dtype=float)
        n = counts.astype(float)
    keep = n > 0
    return x[keep], n[keep]


def _log_pois(x, lam):
    return x[:, None] * np.log(lam)[None, :] - lam[None, :] - gammaln(x + 1)[:, None]


def _component_terms(x, b, s, n_poisson, transitions):
    """Component pmfs and their first/second derivatives in (b, s).

    Means are per bin. Returns P, dP/db, dP/ds, d2P/db2, d2P/dbds, d2P/ds2,
    each of shape (len(x), n_components).
    """
    k = np.arange(n_poisson)
    lam = b + k * s
    P = np.exp(_log_pois(x, lam))
    u = x[:, None] / lam[None, :] - 1
    v = u**2 - x[:, None] / lam[None, :] ** 2
    terms = [P, P * u, P * u * k, P * v, P * v * k, P * v * k * k]
    if transitions:
        p0, p1 = P[:, 0], np.exp(_log_pois(x, np.array([b + s])))[:, 0]
        u0, u1 = u[:, 0], x / (b + s) - 1
        M = (stats.poisson.cdf(x, b) - stats.poisson.cdf(x, b + s)) / s
        mb = (p1 - p0) / s
        ms = (p1 - M) / s
        mbb = (p1 * u1 - p0 * u0) / s
        mbs = p1 * u1 / s - (p1 - p0) / s**2
        mss = p1 * u1 / s - 2 * (p1 - M) / s**2
        extra = [M, mb, ms, mbb, mbs, mss]
        terms = [np.column_stack([t, e]) for t, e in zip(terms, extra)]
    return terms


def _isodata_split(x, n):
    theta = np.average(x, weights=n)
    for _ in range(100):
        lo, hi = x <= theta, x > theta
        if not lo.any() or not hi.any():
            break
        m_lo = np.average(x[lo], weights=n[lo])
        m_hi = np.average(x[hi], weights=n[hi])
        new = 0.5 * (m_lo + m_hi)
        if abs(new - theta) < 1e-9:
            break
        theta = new
    return theta


def _derivatives(x, n, w, b, s, n_poisson, transitions):
    """Log-likelihood, gradient and Hessian in (w_1.., b, s); w_0 is implied."""
    P, Pb, Ps, Pbb, Pbs, Pss = _component_terms(x, b, s, n_poisson, transitions)
    f = P @ w
    C = len(w)
    npar = C + 1
    g = np.empty((len(x), npar))
    g[:, : C - 1] = P[:, 1:] - P[:, [0]]
    g[:, C - 1] = Pb @ w
    g[:, C] = Ps @ w
    h = np.zeros((len(x), npar, npar))
    for j in range(1, C):
        h[:, j - 1, C - 1] = h[:, C - 1, j - 1] = Pb[:, j] - Pb[:, 0]
        h[:, j - 1, C] = h[:, C, j - 1] = Ps[:, j] - Ps[:, 0]
    h[:, C - 1, C - 1] = Pbb @ w
    h[:, C - 1, C] = h[:, C, C - 1] = Pbs @ w
    h[:, C, C] = Pss @ w
    with np.errstate(divide="ignore"):
        ll = float(n @ np.log(f))
    grad = (n / f) @ g
    hess = np.einsum("i,ijk->jk", n, h / f[:, None, None]
                     - g[:, :, None] * g[:, None, :] / (f**2)[:, None, None])
    return ll, grad, hess


def observed_information(x, n, w, b, s, transitions: bool = False):
    """Negative Hessian of the log-likelihood in (w_1.., b, s), means per bin."""
    n_poisson = len(w) - int(transitions)
    return -_derivatives(np.asarray(x, float), np.asarray(n, float), np.asarray(w, float),
                         b, s, n_poisson, transitions)[2]


def _ll_only(x, n, w, b, s, n_poisson, transitions):
    P = _component_terms(x, b, s, n_poisson, transitions)[0]
    with np.errstate(divide="ignore"):
        return float(n @ np.log(P @ w))


def fit_compound_poisson(histogram, k_max: int = 2, bin_width: float = 1.0,
                         transitions: bool = False, max_iter: int = 20_000,
                         tol: float = 1e-11, lrt_level: float = 0.01) -> FitResult:
    """Maximum-likelihood compound Poisson fit of a count histogram.

    ``histogram`` maps count value to occurrences (or is an array indexed
    by value). Component k has mean (b + k*s)*bin_width; ``transitions``
    adds the filling/emptying-bin component. Weights are updated by EM and
    (b, s) by a damped Newton step on the observed likelihood each
    iteration. Standard errors come from the analytic observed information.

    If the mixture does not beat a single Poisson law by a likelihood-ratio
    test at ``lrt_level``, the empty-trap model (w_0 = 1) is returned.
    """
    x, n = _as_arrays(histogram)
    N = n.sum()
    if N < 1000:
        warnings.warn("histogram has fewer than 1000 entries; fit is poorly constrained")
    K = k_max + 1
    C = K + int(transitions)
    theta = _isodata_split(x, n)
    lo = x <= theta
    m_lo = np.average(x[lo], weights=n[lo])
    m_hi = np.average(x[~lo], weights=n[~lo]) if (~lo).any() else m_lo + 1
    w = np.full(C, 1e-3)
    w[0] = n[lo].sum() / N
    w[1] = 1 - w[0]
    w = np.clip(w, 1e-3, None)
    w /= w.sum()
    b = max(m_lo, 1e-3)
    s = max(m_hi - m_lo, 1e-3)
    ll_old = -np.inf
    converged = False
    for it in range(1, max_iter + 1):
        P = _component_terms(x, b, s, K, transitions)[0]
        joint = P * w[None, :]
        f = joint.sum(axis=1)
        w = (n / f) @ joint / N
        ll, grad, hess = _derivatives(x, n, w, b, s, K, transitions)
        gb, hb = grad[C - 1:], hess[C - 1:, C - 1:]
        try:
            step = -np.linalg.solve(hb, gb)
        except np.linalg.LinAlgError:
            step = np.zeros(2)
        if np.any(np.linalg.eigvalsh(hb) >= 0):
            # not locally concave: fall back to a scaled gradient step
            step = gb / (np.abs(np.diag(hb)) + 1e-12)
        t = 1.0
        while t > 1e-10:
            nb, ns = b + t * step[0], s + t * step[1]
            if nb > 0 and ns > 0 and _ll_only(x, n, w, nb, ns, K, transitions) >= ll:
                b, s = nb, ns
                break
            t *= 0.5
        ll = _ll_only(x, n, w, b, s, K, transitions)
        if abs(ll - ll_old) < tol * (1 + abs(ll)):
            converged = True
            break
        ll_old = ll

    def build(weights, b_, s_):
        tw = float(weights[K]) if transitions else 0.0
        return CompoundPoissonModel(weights[:K].copy(), b_ / bin_width, s_ / bin_width,
                                    bin_width, tw)

    if not converged:
        raise FitError("EM did not converge", last=build(w / w.sum(), b, s))

    mean = float(np.average(x, weights=n))
    ll_single = float(n @ _log_pois(x, np.array([mean]))[:, 0])
    df = C  # extra weights and the single-atom rate
    if 2 * (ll - ll_single) < stats.chi2.ppf(1 - lrt_level, df):
        w1 = np.zeros(C)
        w1[0] = 1.0
        model = build(w1, mean, s)
        err = {"background_rate": float(np.sqrt(mean / N)) / bin_width}
        return FitResult(model, ll_single, err, it, single_component=True)

    model = build(w, b, s)
    errors = _standard_errors(x, n, w, b, s, bin_width, K, transitions)
    return FitResult(model, ll, errors, it)


def _standard_errors(x, n, w, b, s, T, n_poisson, transitions):
    info = -_derivatives(x, n, w, b, s, n_poisson, transitions)[2]
    C = len(w)
    cov = np.linalg.pinv(info)
    var = np.diag(cov)
    ones = np.ones(C - 1)
    var_w0 = ones @ cov[: C - 1, : C - 1] @ ones
    wv = [float(np.sqrt(max(var_w0, 0)))] + [float(np.sqrt(max(v, 0))) for v in var[: C - 1]]
    errs = {"weights": wv[:n_poisson]}
    if transitions:
        errs["transition_weight"] = wv[n_poisson]
    errs["background_rate"] = float(np.sqrt(max(var[C - 1], 0))) / T
    errs["single_atom_rate"] = float(np.sqrt(max(var[C], 0))) / T
    return errs


def bin_classes(path: OccupancyPath, bin_width: float, k_max: int = 2):
    """Fraction of bins fully at each atom number, and fraction with a change."""
    n_bins = int(np.floor(path.duration / bin_width + 1e-9))
    edges = bin_width * np.arange(n_bins + 1)
    first = path.value_at(edges[:-1])
    idx_lo = np.searchsorted(path.times, edges[:-1], side="right")
    idx_hi = np.searchsorted(path.times, edges[1:], side="left")
    changed = idx_hi > idx_lo
    frac = np.array([np.mean((first == k) & ~changed) for k in range(k_max + 1)])
    return frac, float(changed.mean())


def misclassification(theta: int, lam0: float, lam1: float) -> float:
    return float(stats.poisson.sf(theta, lam0) + stats.poisson.cdf(theta, lam1))


@dataclass
class Threshold:
    value: int
    error: float
    warning: bool


def atom_threshold(background_rate: float, atom_rate: float, bin_width: float) -> Threshold:
    """Integer count threshold minimizing the equal-prior misclassification.

    A bin is called "loaded" when its count is strictly above the threshold.
    """
    lam0 = background_rate * bin_width
    lam1 = (background_rate + atom_rate) * bin_width
    if atom_rate <= 0:
        warnings.warn("zero single-atom rate: loaded and empty trap are indistinguishable")
        return Threshold(int(np.ceil(lam0)), 1.0, True)
    upper = int(stats.poisson.ppf(1 - 1e-15, lam1)) + 1
    thetas = np.arange(0, upper + 1)
    err = stats.poisson.sf(thetas, lam0) + stats.poisson.cdf(thetas, lam1)
    best = int(np.argmin(err))
    flag = bool(err[best] > 0.25)
    if flag:
        warnings.warn(f"poorly separated levels: total misclassification {err[best]:.3f}")
    return Threshold(int(thetas[best]), float(err[best]), flag)


def detect_loading(trace: CountTrace, threshold: int, n_consecutive: int = 2) -> np.ndarray:
    """End times of the first ``n_consecutive`` above-threshold bins after each empty bin.

    The detector is armed at the start of the trace and re-armed by any bin
    at or below the threshold.
    """
    if n_consecutive < 1:
        raise ValueError("n_consecutive must be >= 1")
    above = trace.counts > threshold
    out = []
    run = 0
    armed = True
    for i, a in enumerate(above):
        if not a:
            run = 0
            armed = True
            continue
        run += 1
        if armed and run == n_consecutive:
            out.append(trace.start_time + (i + 1) * trace.bin_width)
            armed = False
    return np.array(out)


@dataclass
class LifetimeEstimate:
    tau: float
    ci_low: float
    ci_high: float
    n_complete: int
    total_time: float


def occupied_dwells_from_trace(trace: CountTrace, threshold: int):
    above = trace.counts > threshold
    change = np.flatnonzero(np.diff(above.astype(int))) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(above)]])
    sel = above[starts]
    lengths = (ends - starts)[sel] * trace.bin_width
    censored = ((starts == 0) | (ends == len(above)))[sel]
    return lengths, censored


def dwell_lifetime(source, threshold: int | None = None, confidence: float = 0.95,
                   min_dwells: int = 30) -> LifetimeEstimate:
    """Exponential MLE of the occupied-dwell lifetime, censoring-aware.

    ``source`` is an :class:`OccupancyPath`, a :class:`CountTrace` (with
    ``threshold``) or a ``(durations, censored)`` pair. Dwells cut by the
    record edges add exposure time but no event.
    """
    if isinstance(source, OccupancyPath):
        lengths, censored = source.dwells(1)
    elif isinstance(source, CountTrace):
        if threshold is None:
            raise ValueError("a count trace needs a threshold")
        lengths, censored = occupied_dwells_from_trace(source, threshold)
    else:
        lengths, censored = (np.asarray(a) for a in source)
        censored = censored.astype(bool)
    n_events = int((~censored).sum())
    if n_events < min_dwells:
        raise ValueError(f"only {n_events} complete dwells (< {min_dwells})")
    total = float(lengths.sum())
    tau = total / n_events
    alpha = 1 - confidence
    # 2 * total / tau_true ~ chi2(2 n_events)
    lo = 2 * total / stats.chi2.ppf(1 - alpha / 2, 2 * n_events)
    hi = 2 * total / stats.chi2.ppf(alpha / 2, 2 * n_events)
    return LifetimeEstimate(tau, lo, hi, n_events, total)
