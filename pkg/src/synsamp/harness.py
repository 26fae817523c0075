"""Stimulus schedules and lesions for the spiking experiments, plus readout and survival analysis."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .wta import WtaNetwork

PATTERN_MS = 200.0
GAP_MS = 50.0
NOISE_HZ = 1.0
MAX_RATE_HZ = 50.0


class StatisticsError(ValueError):
    """Not enough events for the requested statistic."""

    def __init__(self, message, count):
        super().__init__(message)
        self.count = count


# ---------------------------------------------------------------- inputs

def encode_image(gray, max_rate_hz=MAX_RATE_HZ, noise_hz=NOISE_HZ):
    """Gray levels 0..255 -> Poisson rates max_rate*g/255 + noise (Hz)."""
    g = np.asarray(gray, dtype=float)
    if np.any((g < 0) | (g > 255)) or not np.all(np.isfinite(g)):
        raise ValueError("gray levels must lie in [0, 255]")
    return max_rate_hz * g / 255.0 + noise_hz


@dataclass
class InputSchedule:
    """Piecewise-constant input rates.

    Segment i covers [starts_ms[i], starts_ms[i] + durations_ms[i]).
    ``label`` is the stimulus class (-1 for noise gaps), ``trial`` groups
    segments of one presentation (-1 for gaps), ``plastic`` switches learning.
    """

    starts_ms: np.ndarray
    durations_ms: np.ndarray
    rates_hz: np.ndarray
    label: np.ndarray
    trial: np.ndarray
    plastic: np.ndarray
    phase_boundaries_ms: list = field(default_factory=list)

    def __post_init__(self):
        self.starts_ms = np.asarray(self.starts_ms, float)
        self.durations_ms = np.asarray(self.durations_ms, float)
        self.rates_hz = np.atleast_2d(np.asarray(self.rates_hz, float))
        self.label = np.asarray(self.label, int)
        self.trial = np.asarray(self.trial, int)
        self.plastic = np.asarray(self.plastic, bool)
        n = len(self.starts_ms)
        if not (len(self.durations_ms) == len(self.label) == len(self.trial)
                == len(self.plastic) == self.rates_hz.shape[0] == n):
            raise ValueError("schedule fields must have one entry per segment")
        if n == 0:
            raise ValueError("schedule has no segments")
        if np.any(self.durations_ms <= 0):
            raise ValueError("segment durations must be > 0")
        if np.any(self.rates_hz < 0):
            raise ValueError("rates must be >= 0")

    @classmethod
    def from_segments(cls, durations_ms, rates_hz, label=None, trial=None, plastic=True, t0=0.0):
        d = np.asarray(durations_ms, float)
        starts = t0 + np.concatenate([[0.0], np.cumsum(d)[:-1]])
        n = len(d)
        label = np.full(n, -1) if label is None else label
        trial = np.full(n, -1) if trial is None else trial
        plastic = np.full(n, plastic) if np.ndim(plastic) == 0 else plastic
        return cls(starts, d, rates_hz, label, trial, plastic)

    @property
    def n_inputs(self):
        return self.rates_hz.shape[1]

    @property
    def end_ms(self):
        return float(self.starts_ms[-1] + self.durations_ms[-1])

    @property
    def total_duration_ms(self):
        return float(self.durations_ms.sum())

    def check_contiguous(self):
        ends = self.starts_ms[:-1] + self.durations_ms[:-1]
        bad = np.flatnonzero(np.abs(ends - self.starts_ms[1:]) > 1e-9)
        if bad.size:
            i = bad[0]
            raise ValueError(f"schedule gap or overlap between segment {i} (ends {ends[i]} ms) "
                             f"and segment {i + 1} (starts {self.starts_ms[i + 1]} ms)")

    def then(self, other: "InputSchedule") -> "InputSchedule":
        """Append ``other`` after this schedule (times and trial ids shifted)."""
        shift = self.end_ms - other.starts_ms[0]
        tr = np.where(other.trial >= 0, other.trial + (self.trial.max() + 1), -1)
        return InputSchedule(np.concatenate([self.starts_ms, other.starts_ms + shift]),
                             np.concatenate([self.durations_ms, other.durations_ms]),
                             np.vstack([self.rates_hz, other.rates_hz]),
                             np.concatenate([self.label, other.label]),
                             np.concatenate([self.trial, tr]),
                             np.concatenate([self.plastic, other.plastic]),
                             list(self.phase_boundaries_ms)
                             + [b + shift for b in other.phase_boundaries_ms])

    def trials(self):
        """(start_ms, end_ms, label) per trial, in time order."""
        out = []
        for t in np.unique(self.trial[self.trial >= 0]):
            idx = np.flatnonzero(self.trial == t)
            out.append((float(self.starts_ms[idx[0]]),
                        float(self.starts_ms[idx[-1]] + self.durations_ms[idx[-1]]),
                        int(self.label[idx[0]])))
        out.sort()
        return out


def presentation_schedule(patterns, labels, order, pattern_ms=PATTERN_MS, gap_ms=GAP_MS,
                          noise_hz=NOISE_HZ, plastic=True, t0=0.0):
    """Each pattern in ``order`` for ``pattern_ms`` followed by a noise gap.

    A pattern is either a rate vector or a (n_bins, n_inputs) rate profile
    whose bins split ``pattern_ms`` evenly.
    """
    patterns = [np.asarray(p, float) for p in patterns]
    n_in = patterns[0].shape[-1]
    durs, rates, lab, tri = [], [], [], []
    for t, j in enumerate(order):
        prof = np.atleast_2d(patterns[j])
        nb = prof.shape[0]
        for r in prof:
            durs.append(pattern_ms / nb)
            rates.append(r)
            lab.append(labels[j])
            tri.append(t)
        if gap_ms > 0:
            durs.append(gap_ms)
            rates.append(np.full(n_in, noise_hz))
            lab.append(-1)
            tri.append(-1)
    return InputSchedule.from_segments(durs, np.array(rates), lab, tri, plastic, t0)


def build_phase_schedule(datasets: Sequence, presentations: Sequence[int], rng,
                         pattern_ms=PATTERN_MS, gap_ms=GAP_MS, noise_hz=NOISE_HZ):
    """Concatenate phases; each presentation draws a random pattern of the phase pool.

    ``datasets[p]`` is (rates (n, n_inputs), labels (n,)).  Phase boundaries
    (ms) are stored on the schedule.
    """
    if len(datasets) != len(presentations) or not datasets:
        raise ValueError("need one presentation count per phase")
    sched = None
    bounds = []
    for (rates, labels), n in zip(datasets, presentations):
        rates = np.asarray(rates, float)
        if len(rates) == 0:
            raise ValueError("empty dataset for a phase")
        if n < 1:
            raise ValueError("need at least one presentation per phase")
        order = rng.integers(0, len(rates), size=n)
        part = presentation_schedule(list(rates), list(labels), order, pattern_ms, gap_ms, noise_hz)
        sched = part if sched is None else sched.then(part)
        bounds.append(sched.end_ms)
    sched.phase_boundaries_ms = bounds[:-1]
    return sched


# ---------------------------------------------------------------- survival

@dataclass
class SurvivalRecord:
    synapse: tuple
    birth_ms: float
    death_ms: Optional[float] = None

    def __post_init__(self):
        if self.death_ms is not None and not self.death_ms > self.birth_ms:
            raise ValueError("death must come after birth")

    @property
    def censored(self):
        return self.death_ms is None

    def age(self, end_ms):
        return (end_ms if self.death_ms is None else self.death_ms) - self.birth_ms


def survival_records(events, end_ms):
    """Pair every birth with the next death of the same synapse.

    Deaths without a preceding birth (synapses functional from the start) are
    ignored; births without a later death are censored at ``end_ms``.
    """
    order = np.lexsort((events.time_ms, events.pre, events.post))
    open_births = {}
    out = []
    for j in order:
        key = (int(events.post[j]), int(events.pre[j]))
        t = float(events.time_ms[j])
        if events.kind[j] == 1:
            open_births[key] = t
        elif key in open_births:
            out.append(SurvivalRecord(key, open_births.pop(key), t))
    for key, t in open_births.items():
        if t < end_ms:
            out.append(SurvivalRecord(key, t, None))
    out.sort(key=lambda r: (r.birth_ms, r.synapse))
    return out


def survival_curve(records, end_ms, window=None, min_events=20):
    """Kaplan-Meier surviving fraction versus age for synapses born in ``window``.

    Returns (ages_ms, surviving_fraction) evaluated at each distinct death age.
    """
    from statsmodels.duration.survfunc import SurvfuncRight

    t0, t1 = (-np.inf, np.inf) if window is None else window
    sel = [r for r in records if t0 <= r.birth_ms < t1]
    if len(sel) < min_events:
        raise StatisticsError(f"need at least {min_events} births, got {len(sel)}", len(sel))
    ages = np.array([r.age(end_ms) for r in sel])
    died = np.array([not r.censored for r in sel], dtype=int)
    if not died.any():
        return np.array([0.0, ages.max()]), np.array([1.0, 1.0])
    sf = SurvfuncRight(ages, died)
    return np.asarray(sf.surv_times, float), np.asarray(sf.surv_prob, float)


def median_lifetime(ages, surviving):
    """First age at which the survival curve reaches 0.5.

    Returns (value, is_lower_bound); if the curve never reaches 0.5 the
    largest observed age is a lower bound.
    """
    ages = np.asarray(ages, float)
    surviving = np.asarray(surviving, float)
    hit = np.flatnonzero(surviving <= 0.5 + 1e-12)  # product-limit round-off
    if hit.size:
        return float(ages[hit[0]]), False
    return float(ages[-1]), True


@dataclass
class PowerLawFit:
    exponent: float
    r2: float
    intercept: float
    n_points: int
    decades: float


def fit_power_law(x, y):
    """Least-squares line through (log10 x, log10 y): y ~ 10^intercept * x^exponent."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive values")
    if len(x) < 5:
        raise ValueError(f"need at least 5 points, got {len(x)}")
    decades = float(np.log10(x.max() / x.min()))
    if decades < 1.0:
        raise ValueError(f"points must span at least one decade, span {decades:.2f}")
    lx, ly = np.log10(x), np.log10(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(float(slope), float(r2), float(icpt), len(x), decades)


def log_binned(ages, surviving, n_bins=20, lo=None, hi=None):
    """Survival curve sampled at log-spaced ages (step-function lookup)."""
    ages = np.asarray(ages, float)
    surviving = np.asarray(surviving, float)
    lo = ages[ages > 0].min() if lo is None else lo
    hi = ages.max() if hi is None else hi
    grid = np.logspace(np.log10(lo), np.log10(hi), n_bins)
    idx = np.searchsorted(ages, grid, side="right") - 1
    vals = np.where(idx >= 0, surviving[np.clip(idx, 0, None)], 1.0)
    return grid, vals


# ---------------------------------------------------------------- lesions

REMOVE_NEURONS = "remove_neurons"
REMOVE_CONNECTIONS = "remove_connections_ban_regrowth"


@dataclass
class LesionSpec:
    """``targets``: neuron ids for neuron removal; for connection removal a
    pair of neuron-id groups (a, b) whose functional synapses in both
    directions are cut and banned."""

    kind: str
    targets: object
    time_ms: float = 0.0

    def __post_init__(self):
        if self.kind not in (REMOVE_NEURONS, REMOVE_CONNECTIONS):
            raise ValueError(f"unknown lesion kind {self.kind!r}")


def apply_lesion(net: WtaNetwork, spec: LesionSpec, theta0=3.0):
    """Return a lesioned copy and the number of neurons or synapses removed.

    An explicitly empty target list is a no-op; targets that do not exist in
    the network raise ValueError.  Re-applying a lesion changes nothing.
    """
    out = net.copy()
    n_in = net.n_inputs
    if spec.kind == REMOVE_NEURONS:
        ids = np.asarray(list(spec.targets), int)
        if ids.size == 0:
            return out, 0
        if ids.min() < 0 or ids.max() >= net.n_neurons:
            raise ValueError("lesion targets neurons that do not exist")
        removed = int(out.alive[ids].sum())
        out.alive[ids] = False
        out.exists[ids, :] = False
        out.exists[:, n_in + ids] = False
        out.visible[ids, :] = False
        out.visible[:, n_in + ids] = False
    else:
        a, b = (np.asarray(list(g), int) for g in spec.targets)
        if a.size == 0 and b.size == 0:
            return out, 0
        if a.size == 0 or b.size == 0:
            raise ValueError("connection lesion needs two non-empty neuron groups")
        mask = np.zeros(net.theta.shape, bool)
        mask[np.ix_(a, n_in + b)] = True
        mask[np.ix_(b, n_in + a)] = True
        hit = mask & net.functional()
        removed = int(hit.sum())
        out.banned |= hit
        out.visible &= ~hit
    out.applied_lesions.append({"kind": spec.kind, "time_ms": spec.time_ms, "removed": removed})
    return out, removed


def active_synapse_count(net: WtaNetwork) -> int:
    return int(net.functional().sum())


# ---------------------------------------------------------------- readout

def window_counts(spikes, windows, n_neurons):
    """Spike counts per neuron in each (start, end) window, shape (n_windows, n_neurons)."""
    out = np.zeros((len(windows), n_neurons))
    t = spikes.time_ms
    order = np.argsort(t, kind="stable")
    ts, ns = t[order], spikes.neuron[order]
    for w, (a, b) in enumerate(windows):
        i0, i1 = np.searchsorted(ts, [a, b])
        out[w] = np.bincount(ns[i0:i1], minlength=n_neurons)
    return out


def lowpass_features(spikes, windows, n_neurons, tau_ms=50.0):
    """Exponentially filtered spike trains averaged over each window.

    Equals the window count minus the part of each spike's filtered response
    that falls after the window end, divided by the window length.
    """
    out = np.zeros((len(windows), n_neurons))
    t = spikes.time_ms
    order = np.argsort(t, kind="stable")
    ts, ns = t[order], spikes.neuron[order]
    for w, (a, b) in enumerate(windows):
        i0, i1 = np.searchsorted(ts, [a, b])
        mass = 1.0 - np.exp(-(b - ts[i0:i1]) / tau_ms)
        out[w] = np.bincount(ns[i0:i1], weights=mass, minlength=n_neurons) / (b - a) * 1e3
    return out


def train_eval_readout(features, labels, train_idx, test_idx, ridge=1.0):
    """Ridge-regression linear classifier; returns test accuracy.

    Balanced over classes (mean per-class recall) so that a constant output
    scores 1/n_classes.
    """
    from sklearn.linear_model import RidgeClassifier

    x = np.asarray(features, float)
    y = np.asarray(labels)
    train_idx = np.asarray(train_idx)
    test_idx = np.asarray(test_idx)
    if np.intersect1d(train_idx, test_idx).size:
        raise ValueError("train and test windows overlap")
    classes = np.unique(y)
    if classes.size < 2 or any(np.unique(y[s]).size < classes.size for s in (train_idx, test_idx)):
        raise ValueError("every class must appear in both splits")
    clf = RidgeClassifier(alpha=ridge)
    clf.fit(x[train_idx], y[train_idx])
    pred = clf.predict(x[test_idx])
    yt = y[test_idx]
    return float(np.mean([np.mean(pred[yt == c] == c) for c in classes]))


def split_alternating(n):
    """Even windows train, odd windows test."""
    idx = np.arange(n)
    return idx[::2], idx[1::2]


# ---------------------------------------------------------------- PETH

@dataclass
class Peth:
    times_ms: np.ndarray          # bin starts relative to trial onset
    rates_hz: np.ndarray          # (n_neurons, n_bins)
    order: np.ndarray             # neurons sorted by time of maximum rate


def peth(spikes, trial_starts_ms, trial_ms, n_neurons, sigma_ms=50.0, bin_ms=10.0, neurons=None):
    """Trial-averaged, Gaussian-smoothed firing rate per neuron."""
    starts = np.asarray(trial_starts_ms, float)
    if starts.size == 0:
        raise ValueError("need at least one trial")
    n_fine = int(np.ceil(trial_ms))
    hist = np.zeros((n_neurons, n_fine))
    for s in starts:
        m = (spikes.time_ms >= s) & (spikes.time_ms < s + trial_ms)
        rel = np.clip(np.floor(spikes.time_ms[m] - s).astype(int), 0, n_fine - 1)
        np.add.at(hist, (spikes.neuron[m], rel), 1.0)
    hist /= len(starts)
    smooth = gaussian_filter1d(hist, sigma_ms, axis=1, mode="constant")
    nb = int(np.ceil(trial_ms / bin_ms))
    per_bin = int(round(bin_ms))
    pad = nb * per_bin - n_fine
    smooth = np.pad(smooth, ((0, 0), (0, pad)))
    binned = smooth.reshape(n_neurons, nb, per_bin).sum(axis=2) / (bin_ms * 1e-3)
    if neurons is not None:
        binned = binned[np.asarray(neurons)]
    order = np.argsort(np.argmax(binned, axis=1), kind="stable")
    return Peth(np.arange(nb) * bin_ms, binned, order)


def select_tuned_neurons(rates_class_a, rates_class_b, factor=2.0, candidates=None):
    """Neurons whose mean rate for class b is at least ``factor`` times class a."""
    ra = np.asarray(rates_class_a, float)
    rb = np.asarray(rates_class_b, float)
    ids = np.arange(len(ra)) if candidates is None else np.asarray(candidates)
    return ids[(rb[ids] >= factor * ra[ids]) & (rb[ids] > 0)]


# ---------------------------------------------------------------- reconstruction / PCA

def reconstruct_stimulus(rates, efficacies):
    """efficacies^T @ rates, rescaled to [0, 1]."""
    rates = np.asarray(rates, float)
    eff = np.asarray(efficacies, float)
    if eff.ndim != 2 or eff.shape[0] != rates.shape[0]:
        raise ValueError(f"efficacies {eff.shape} do not match {rates.shape[0]} rates")
    img = eff.T @ rates
    lo, hi = img.min(), img.max()
    return np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)


@dataclass
class PcaResult:
    projections: np.ndarray   # (n_snapshots, n_components)
    variances: np.ndarray     # eigenvalues of the snapshot covariance
    components: np.ndarray    # (n_components, n_params)


def pca_trajectory(snapshots, n_components=3):
    x = np.asarray(snapshots, float)
    if x.ndim != 2 or x.shape[0] < max(4, n_components):
        raise ValueError(f"need at least {max(4, n_components)} snapshots, got {x.shape[0] if x.ndim else 0}")
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    var = s ** 2 / (x.shape[0] - 1)
    k = min(n_components, vt.shape[0])
    comps = vt[:k]
    proj = xc @ comps.T
    if k < n_components:
        proj = np.pad(proj, ((0, 0), (0, n_components - k)))
        var = np.pad(var, (0, n_components - len(var)))
    return PcaResult(proj, var[:n_components], comps)


# ---------------------------------------------------------------- synthetic stimuli

def bar_digit_images(n_per_class, rng, size=8, jitter=1, classes=(1, 2)):
    """Symbolic 'digits' on a size x size grid, gray levels 0..255.

    Class 1 is a vertical stroke in the left half, class 2 a horizontal
    stroke pair in the right half; exemplars vary by position, thickness and
    pixel noise.  The two classes use disjoint pixel sets.
    """
    imgs, labels = [], []
    half = size // 2
    for c in classes:
        for _ in range(n_per_class):
            im = np.zeros((size, size))
            if c == 1:
                col = rng.integers(1, half - 1)
                im[1:size - 1, col] = 255
                if rng.random() < 0.5:
                    im[1:size - 1, col + rng.choice([-1, 1])] = 160
            else:
                rows = rng.choice(np.arange(1, size - 1), size=2, replace=False)
                for r in rows:
                    im[r, half:size - 1] = 255
            shift = rng.integers(-jitter, jitter + 1)
            im = np.roll(im, shift, axis=0)
            if c == 1:
                im[:, half:] = 0
            else:
                im[:, :half] = 0
            im = np.clip(im + rng.normal(0, 20, im.shape) * (im > 0), 0, 255)
            imgs.append(im.ravel())
            labels.append(c)
    return np.array(imgs), np.array(labels)


def half_field_patterns(n_per_class, rng, size=8, n_variants=3, density=0.7, flip=0.1,
                        classes=(1, 2), prototype_seed=12345):
    """Dense two-class patterns on a size x size grid, gray levels 0..255.

    Class 1 lives in the left half, class 2 in the right half.  Each class
    has ``n_variants`` random binary prototypes (fixed by ``prototype_seed``);
    an exemplar flips a fraction ``flip`` of its prototype's pixels and draws
    gray levels of the active pixels from [180, 255).
    """
    if len(classes) != 2:
        raise ValueError("half-field patterns have exactly two classes")
    proto_rng = np.random.default_rng(prototype_seed)
    half = size * size // 2
    imgs, labels = [], []
    for ci, c in enumerate(classes):
        protos = proto_rng.random((n_variants, half)) < density
        cols = slice(0, size // 2) if ci == 0 else slice(size // 2, size)
        for _ in range(n_per_class):
            on = protos[rng.integers(n_variants)] ^ (rng.random(half) < flip)
            im = np.zeros((size, size))
            im[:, cols] = np.where(on, rng.uniform(180, 255, half), 0.0).reshape(size, size // 2)
            imgs.append(im.ravel())
            labels.append(c)
    return np.array(imgs), np.array(labels)


def auditory_profiles(n_utterances, rng, n_channels=77, afferents=10, n_bins=20,
                      max_rate_hz=80.0, noise_hz=NOISE_HZ, classes=(1, 2)):
    """Synthetic multi-channel 'cochleagram' rate profiles.

    Each class has a characteristic sweep of active channels over time;
    utterances vary by time warping and amplitude.  Returns rates of shape
    (n, n_bins, n_channels * afferents) and labels.
    """
    out, labels = [], []
    ch = np.arange(n_channels)
    for c in classes:
        for _ in range(n_utterances):
            prof = np.zeros((n_bins, n_channels))
            warp = rng.uniform(0.85, 1.15)
            gain = rng.uniform(0.8, 1.0)
            for b in range(n_bins):
                phase = min(1.0, b / (n_bins - 1) * warp)
                centre = (0.15 + 0.7 * phase) if c == 1 else (0.85 - 0.7 * phase)
                second = 0.5 + (0.3 if c == 1 else -0.3) * np.sin(np.pi * phase)
                prof[b] = (np.exp(-0.5 * ((ch / n_channels - centre) / 0.05) ** 2)
                           + 0.6 * np.exp(-0.5 * ((ch / n_channels - second) / 0.04) ** 2))
            prof = gain * max_rate_hz * prof / prof.max()
            out.append(np.repeat(prof, afferents, axis=1) + noise_hz)
            labels.append(c)
    return np.array(out), np.array(labels)
