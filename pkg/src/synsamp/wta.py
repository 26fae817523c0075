"""Spiking winner-take-all circuits with synaptic and structural sampling.

Network neurons fire with rate rho_net * softmax(u) inside their circuit,
u_k = sum_i w_hat_ki x_i + beta_k, where x_i is the summed EPSP trace of
presynaptic neuron i and beta_k a slow self-inhibiting adaptation trace.
Each potential synapse carries one parameter theta with efficacy
w = exp(theta - theta0); theta <= 0 means the synapse is retracted.

Times are in ms, the sampling speed b is per second.  The pure functions at
the top are the reference definitions; ``simulate`` runs the same dynamics
through the compiled kernel in ``_wta_kernel``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _wta_kernel as K
from .priors import WTA_PRIOR, PriorSpec, log_prior_grad

ALPHA = math.exp(-2.0)


@dataclass(frozen=True)
class EpspKernelParams:
    tau_rise_ms: float = 2.0
    tau_fall_ms: float = 20.0

    def __post_init__(self):
        if not 0 < self.tau_rise_ms < self.tau_fall_ms:
            raise ValueError("need 0 < tau_rise < tau_fall")


@dataclass(frozen=True)
class AdaptationParams:
    tau_rise_s: float = 12.0
    tau_fall_s: float = 30.0
    gamma: float = -8.0

    def __post_init__(self):
        if not 0 < self.tau_rise_s < self.tau_fall_s:
            raise ValueError("need 0 < tau_rise < tau_fall")


@dataclass
class WtaConfig:
    rho_net_hz: float = 100.0
    epsp: EpspKernelParams = field(default_factory=EpspKernelParams)
    adaptation: AdaptationParams = field(default_factory=AdaptationParams)
    theta0: float = 3.0
    alpha: float = ALPHA
    b: float = 1e-4              # sampling speed, 1/s
    n_data: float = 100.0
    temperature: float = 1.0
    theta_min: float = -5.0
    theta_max: float = math.inf
    max_step_factor: float = 5.0  # spike-triggered |dtheta| <= factor * b
    prior: PriorSpec = WTA_PRIOR
    dt_ms: float = 1.0
    noise_interval_ms: float = 1.0
    lateral_delay_ms: float = 5.0
    birth_threshold: float = 0.05
    block_ms: float = 1000.0

    def __post_init__(self):
        if self.rho_net_hz <= 0:
            raise ValueError("rho_net_hz must be > 0")
        if self.b < 0:
            raise ValueError("b must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if not self.dt_ms > 0:
            raise ValueError("dt_ms must be > 0")
        if self.noise_every < 1 or abs(self.noise_every * self.dt_ms - self.noise_interval_ms) > 1e-9:
            raise ValueError("noise_interval_ms must be a positive multiple of dt_ms")
        if self.delay_steps < 1:
            raise ValueError("lateral_delay_ms must be at least one time step")
        if self.block_steps % self.noise_every:
            raise ValueError("block_ms must be a multiple of noise_interval_ms")
        if not self.theta_min < self.theta_max:
            raise ValueError("theta_min must be < theta_max")
        if self.rho_net_hz * self.dt_ms * 1e-3 > 0.1 + 1e-12:
            raise ValueError("rho_net * dt must stay below 0.1")

    @property
    def noise_every(self) -> int:
        return int(round(self.noise_interval_ms / self.dt_ms))

    @property
    def delay_steps(self) -> int:
        return int(round(self.lateral_delay_ms / self.dt_ms))

    @property
    def block_steps(self) -> int:
        return int(round(self.block_ms / self.dt_ms))

    @property
    def max_event_step(self) -> float:
        return self.max_step_factor * self.b

    def to_dict(self):
        d = asdict(self)
        d["prior"] = self.prior.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "epsp" in d:
            d["epsp"] = EpspKernelParams(**d["epsp"])
        if "adaptation" in d:
            d["adaptation"] = AdaptationParams(**d["adaptation"])
        if "prior" in d:
            d["prior"] = PriorSpec.from_dict(d["prior"])
        return cls(**d)


# ---------------------------------------------------------------- reference math

def double_exp_kernel(s, tau_rise, tau_fall):
    s = np.asarray(s, dtype=float)
    safe = np.where(s > 0, s, 0.0)
    out = np.where(s > 0, np.exp(-safe / tau_fall) - np.exp(-safe / tau_rise), 0.0)
    return out[()] if out.ndim == 0 else out


def kernel_peak_time(tau_rise, tau_fall):
    return tau_fall * tau_rise / (tau_fall - tau_rise) * math.log(tau_fall / tau_rise)


def epsp_kernel(s_ms, params: EpspKernelParams = EpspKernelParams()):
    return double_exp_kernel(s_ms, params.tau_rise_ms, params.tau_fall_ms)


def summed_epsp_trace(spike_times_ms, t_ms, params: EpspKernelParams = EpspKernelParams()):
    """x_i(t): unit-weight EPSP sum of all spikes at or before t."""
    st = np.asarray(spike_times_ms, dtype=float)
    if st.size == 0:
        return 0.0
    return float(np.sum(epsp_kernel(t_ms - st[st <= t_ms], params)))


def efficacy(theta, theta0=3.0):
    return np.exp(np.asarray(theta, dtype=float) - theta0)


def effective_weight(theta, theta0=3.0, banned=False):
    """w_hat = max(0, exp(theta - theta0) - exp(-theta0)); 0 where banned."""
    w = np.maximum(0.0, efficacy(theta, theta0) - math.exp(-theta0))
    w = np.where(banned, 0.0, w)
    return w[()] if np.ndim(w) == 0 else w


def membrane_potential(theta_row, traces, beta=0.0, theta0=3.0, banned=False):
    """u_k = sum_i w_hat_ki x_i + beta_k for one neuron."""
    return float(np.dot(effective_weight(theta_row, theta0, banned), traces) + beta)


def circuit_rates(u, rho_net=100.0):
    """Softmax rates of one circuit; they sum to rho_net."""
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        raise ValueError("a circuit needs at least one neuron")
    e = np.exp(u - u.max())
    return rho_net * e / e.sum()


def draw_spikes(rates_hz, dt_ms, rng):
    """Independent Poisson spiking over one step: returns indices that fired."""
    rates_hz = np.asarray(rates_hz, dtype=float)
    p = -np.expm1(-rates_hz * dt_ms * 1e-3)
    return np.flatnonzero(rng.random(rates_hz.shape) < p)


def poisson_spike_times(rate_hz, duration_ms, rng):
    """Sorted spike times of a homogeneous Poisson process on [0, duration)."""
    n = rng.poisson(rate_hz * duration_ms * 1e-3)
    return np.sort(rng.uniform(0.0, duration_ms, size=n))


def adaptation_value(own_spike_times_ms, t_ms, params: AdaptationParams = AdaptationParams()):
    """beta_k(t) = gamma * sum_f kappa(t - t_f) with the slow double exponential."""
    st = np.asarray(own_spike_times_ms, dtype=float) * 1e-3
    if st.size == 0:
        return 0.0
    s = t_ms * 1e-3 - st[st <= t_ms * 1e-3]
    return float(params.gamma * np.sum(double_exp_kernel(s, params.tau_rise_s, params.tau_fall_s)))


def likelihood_grad_spiking(x, w, post_spiked, alpha=ALPHA):
    """d/dw log p at one time point: S_k (x_i - alpha e^w); zero without a spike."""
    g = np.asarray(x, dtype=float) - alpha * np.exp(np.asarray(w, dtype=float))
    return np.where(post_spiked, g, 0.0)


def structural_sampling_update(theta, post_spiked, traces, cfg: WtaConfig, rng=None,
                               dt_ms=None, banned=None, noise=True, likelihood=True):
    """One Euler step of the structural sampling rule for a dense (post, pre) block.

    The spike-triggered likelihood jump b N w (x - alpha e^w) is clipped to
    +-max_step_factor*b per event; prior drift and diffusion are applied over
    ``dt_ms``.  Returns the new theta (clipped to [theta_min, theta_max]).
    """
    theta = np.asarray(theta, dtype=float)
    dt_s = (cfg.dt_ms if dt_ms is None else dt_ms) * 1e-3
    banned = np.zeros(theta.shape, bool) if banned is None else np.asarray(banned, bool)
    spiked = np.asarray(post_spiked, dtype=bool).reshape(-1, 1)
    out = theta.copy()
    if likelihood:
        w = efficacy(theta, cfg.theta0)
        jump = cfg.b * cfg.n_data * w * likelihood_grad_spiking(traces, w, spiked, cfg.alpha)
        jump = np.clip(jump, -cfg.max_event_step, cfg.max_event_step)
        out = out + np.where(banned, 0.0, jump)
    out = out + cfg.b * dt_s * log_prior_grad(theta, cfg.prior)
    if noise:
        out = out + math.sqrt(2 * cfg.b * cfg.temperature * dt_s) * rng.standard_normal(theta.shape)
    return np.clip(out, cfg.theta_min, cfg.theta_max)


def _prior_code(spec: PriorSpec):
    if spec.kind == "gaussian":
        return K.PRIOR_GAUSSIAN, np.array([spec.mu, spec.sigma, 0, 0, 0], float)
    if spec.kind == "gaussian_mixture2":
        return K.PRIOR_MIXTURE, np.array([spec.weight1, spec.mu1, spec.sigma1, spec.mu2, spec.sigma2], float)
    return K.PRIOR_UNIFORM, np.zeros(5)


# ---------------------------------------------------------------- network

@dataclass
class WtaNetwork:
    """Dense synapse table over (network neuron, presynaptic source).

    Columns 0..n_inputs-1 are input neurons, column n_inputs + j is network
    neuron j.  ``exists`` marks potential synapses, ``banned`` synapses that
    may not regrow.  Network neurons of one circuit have contiguous ids.
    """

    n_inputs: int
    circuit_sizes: list
    theta: np.ndarray
    exists: np.ndarray
    banned: np.ndarray
    alive: np.ndarray
    population: np.ndarray          # population label per network neuron
    step: int = 0
    trace_f: np.ndarray = None
    trace_r: np.ndarray = None
    adapt_f: np.ndarray = None
    adapt_r: np.ndarray = None
    delay_buf: np.ndarray = None
    next_in: np.ndarray = None
    visible: np.ndarray = None
    applied_lesions: list = field(default_factory=list)

    def __post_init__(self):
        n = self.n_neurons
        if sum(self.circuit_sizes) != n:
            raise ValueError("circuit sizes must cover every network neuron exactly once")
        if self.theta.shape != (n, self.n_inputs + n):
            raise ValueError(f"theta must have shape {(n, self.n_inputs + n)}, got {self.theta.shape}")
        for name in ("exists", "banned"):
            if getattr(self, name).shape != self.theta.shape:
                raise ValueError(f"{name} must match theta")
        np.fill_diagonal(self.exists[:, self.n_inputs:], False)
        if self.trace_f is None:
            self.reset_dynamics()

    @property
    def n_neurons(self):
        return self.theta.shape[0]

    @property
    def n_pre(self):
        return self.theta.shape[1]

    def circuit_of(self):
        return np.repeat(np.arange(len(self.circuit_sizes)), self.circuit_sizes)

    def reset_dynamics(self, delay_steps=5):
        n = self.n_neurons
        self.trace_f = np.zeros(self.n_pre)
        self.trace_r = np.zeros(self.n_pre)
        self.adapt_f = np.zeros(n)
        self.adapt_r = np.zeros(n)
        self.delay_buf = np.zeros((max(1, delay_steps), n), dtype=bool)
        self.next_in = np.full(max(1, self.n_inputs), -1.0)
        self.visible = self.theta > 0

    def effective_weights(self, theta0=3.0):
        w = effective_weight(self.theta, theta0, self.banned)
        return np.where(self.exists, w, 0.0)

    def functional(self):
        return (self.theta > 0) & self.exists & ~self.banned

    def input_block(self):
        return self.theta[:, :self.n_inputs]

    def lateral_block(self):
        return self.theta[:, self.n_inputs:]

    def beta(self, gamma=-8.0):
        return gamma * (self.adapt_f - self.adapt_r)

    def copy(self):
        cp = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        cp["circuit_sizes"] = list(self.circuit_sizes)
        cp["applied_lesions"] = list(self.applied_lesions)
        return WtaNetwork(**cp)

    def snapshot(self):
        """Functional synapses keyed by 'pre->post' (pre uses the column index)."""
        post, pre = np.nonzero(self.exists)
        return {f"{i}->{k}": float(self.theta[k, i]) for k, i in zip(post, pre)}


def build_network(n_inputs, circuit_sizes, rng, cfg: WtaConfig = None, input_mask=None,
                  lateral=False, population=None):
    """All potential synapses, theta drawn from the prior.

    ``input_mask`` (n_neurons, n_inputs) restricts which inputs project to
    which neuron; ``lateral`` adds all-to-all recurrent synapses (no self
    connections).
    """
    cfg = cfg or WtaConfig()
    n = int(sum(circuit_sizes))
    if n < 1 or n_inputs < 0:
        raise ValueError("need at least one network neuron")
    exists = np.zeros((n, n_inputs + n), dtype=bool)
    exists[:, :n_inputs] = True if input_mask is None else np.asarray(input_mask, bool)
    if lateral:
        exists[:, n_inputs:] = ~np.eye(n, dtype=bool)
    if cfg.prior.kind == "uniform" and (cfg.prior.lo is None or cfg.prior.hi is None):
        theta = rng.normal(0.0, 1.0, size=exists.shape)
    else:
        from .priors import sample_prior
        theta = sample_prior(cfg.prior, rng, size=exists.shape)
    theta = np.clip(theta, cfg.theta_min, cfg.theta_max)
    pop = np.zeros(n, int) if population is None else np.asarray(population, int)
    net = WtaNetwork(n_inputs, list(circuit_sizes), theta, exists,
                     np.zeros_like(exists), np.ones(n, bool), pop)
    net.reset_dynamics(cfg.delay_steps)
    return net


# ---------------------------------------------------------------- simulation

@dataclass
class SpikeLog:
    neuron: np.ndarray
    time_ms: np.ndarray

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0))

    def __len__(self):
        return len(self.neuron)

    def extend(self, other):
        return SpikeLog(np.concatenate([self.neuron, other.neuron]),
                        np.concatenate([self.time_ms, other.time_ms]))

    def window(self, t0, t1):
        m = (self.time_ms >= t0) & (self.time_ms < t1)
        return SpikeLog(self.neuron[m], self.time_ms[m])

    def counts(self, n_neurons):
        return np.bincount(self.neuron, minlength=n_neurons)

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("neuron_id,time_ms\n")
            for k, t in zip(self.neuron, self.time_ms):
                f.write(f"{int(k)},{t!r}\n")


@dataclass
class SynapseEvents:
    """Birth (1) / death (0) transitions of the functional flag."""
    post: np.ndarray
    pre: np.ndarray
    time_ms: np.ndarray
    kind: np.ndarray

    @classmethod
    def empty(cls):
        z = np.zeros(0, np.int64)
        return cls(z, z.copy(), np.zeros(0), z.copy())

    def extend(self, other):
        return SynapseEvents(*(np.concatenate([a, b]) for a, b in
                               zip((self.post, self.pre, self.time_ms, self.kind),
                                   (other.post, other.pre, other.time_ms, other.kind))))


@dataclass
class SimulationResult:
    spikes: SpikeLog
    events: SynapseEvents
    snapshots: list               # (time_ms, theta copy)
    metrics: dict                 # name -> list of (time_ms, value)
    max_rate_error: float
    max_event_step: float
    min_theta: float
    fixed_point: Optional[dict] = None


@dataclass
class _Accumulators:
    fp_sum_x: np.ndarray
    fp_sum_target: np.ndarray
    fp_count: np.ndarray


def _segment_table(schedule, s0, s1, dt_ms):
    """Segments overlapping steps [s0, s1) as (start_step, rates, plastic)."""
    starts = np.round(schedule.starts_ms / dt_ms).astype(np.int64)
    ends = starts + np.round(schedule.durations_ms / dt_ms).astype(np.int64)
    idx = np.flatnonzero((ends > s0) & (starts < s1))
    if idx.size == 0:
        raise ValueError(f"input schedule does not cover steps {s0}..{s1}")
    return (starts[idx].copy(), np.ascontiguousarray(schedule.rates_hz[idx], dtype=float),
            schedule.plastic[idx].astype(np.uint8))


def simulate(net: WtaNetwork, schedule, duration_ms, cfg: WtaConfig, rng: np.random.Generator,
             track_events=False, track_fixed_point=False, fixed_point_from_ms=0.0,
             snapshot_every_ms=None, on_block=None):
    """Run the network for ``duration_ms`` from its current step.

    The schedule must cover [net time, net time + duration) without gaps.
    ``rng`` supplies one seed per block; simulation state lives in ``net``,
    so splitting a run at block boundaries reproduces it bit for bit.
    ``on_block(net, t_ms)`` is called after each block (checkpoint hook).
    """
    schedule.check_contiguous()
    if net.n_inputs != schedule.rates_hz.shape[1]:
        raise ValueError(f"schedule has {schedule.rates_hz.shape[1]} inputs, network {net.n_inputs}")
    dt = cfg.dt_ms
    n_total = int(round(duration_ms / dt))
    start = net.step
    end = start + n_total
    if end * dt > schedule.end_ms + 1e-9 or start * dt < schedule.starts_ms[0] - 1e-9:
        raise ValueError(f"schedule covers [{schedule.starts_ms[0]}, {schedule.end_ms}) ms, "
                         f"simulation needs [{start * dt}, {end * dt})")
    if net.delay_buf.shape[0] != cfg.delay_steps:
        raise ValueError("network delay line does not match cfg.lateral_delay_ms")
    ep, ad = cfg.epsp, cfg.adaptation
    dec_f, dec_r = math.exp(-dt / ep.tau_fall_ms), math.exp(-dt / ep.tau_rise_ms)
    adec_f = math.exp(-dt * 1e-3 / ad.tau_fall_s)
    adec_r = math.exp(-dt * 1e-3 / ad.tau_rise_s)
    kind, pp = _prior_code(cfg.prior)
    sizes = np.asarray(net.circuit_sizes, np.int64)
    circ_start = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    what = net.effective_weights(cfg.theta0)
    drive_f = np.zeros(net.n_neurons)
    drive_r = np.zeros(net.n_neurons)
    K._recompute_drive(what, net.exists, net.trace_f, net.trace_r, net.alive, drive_f, drive_r)
    acc = _Accumulators(np.zeros(net.theta.shape), np.zeros(net.theta.shape),
                        np.zeros(net.n_neurons, np.int64))

    spikes, events = SpikeLog.empty(), SynapseEvents.empty()
    snapshots, metrics = [], {"active_synapses": []}
    stats = np.array([0.0, 0.0, np.inf, 0.0])
    block = cfg.block_steps
    ev_cap = 200_000
    s = start
    next_snap = None if snapshot_every_ms is None else start * dt
    while s < end:
        # blocks are aligned to multiples of block_steps from step 0
        s1 = min(end, (s // block + 1) * block)
        n = s1 - s
        seg_start, seg_rates, seg_plastic = _segment_table(schedule, s, s1, dt)
        spk_n = np.empty(n * net.n_neurons, np.int64)
        spk_s = np.empty(n * net.n_neurons, np.int64)
        ev = [np.empty(ev_cap, np.int64) for _ in range(4)]
        fp_on = track_fixed_point and s * dt >= fixed_point_from_ms
        seed = int(rng.integers(0, 2**31 - 1))
        n_spk, n_ev = K.run_block(
            seed, s, n, dt, seg_start, seg_rates, seg_plastic,
            net.exists, net.banned, net.alive, circ_start, sizes,
            net.theta, what, net.visible,
            net.trace_f, net.trace_r, drive_f, drive_r, net.adapt_f, net.adapt_r,
            net.delay_buf, net.next_in,
            net.n_inputs, dec_f, dec_r, adec_f, adec_r, ad.gamma, cfg.rho_net_hz,
            cfg.theta0, cfg.alpha, cfg.b, cfg.n_data, cfg.temperature,
            cfg.theta_min, cfg.theta_max, cfg.max_event_step, cfg.noise_every,
            kind, pp, cfg.birth_threshold, track_events, fp_on,
            spk_n, spk_s, ev[0], ev[1], ev[2], ev[3],
            acc.fp_sum_x, acc.fp_sum_target, acc.fp_count, stats)
        if stats[3]:
            raise RuntimeError("synapse event buffer overflow; shorten block_ms")
        spikes = spikes.extend(SpikeLog(spk_n[:n_spk].copy(), spk_s[:n_spk] * dt))
        if track_events:
            events = events.extend(SynapseEvents(ev[0][:n_ev].copy(), ev[1][:n_ev].copy(),
                                                 ev[2][:n_ev] * dt, ev[3][:n_ev].copy()))
        s = s1
        net.step = s
        metrics["active_synapses"].append((s * dt, int(net.functional().sum())))
        if next_snap is not None and s * dt >= next_snap:
            snapshots.append((s * dt, net.theta.copy()))
            next_snap += snapshot_every_ms
        if on_block is not None:
            on_block(net, s * dt)

    fp = None
    if track_fixed_point:
        fp = {"sum_x": acc.fp_sum_x, "sum_target": acc.fp_sum_target, "count": acc.fp_count}
    return SimulationResult(spikes, events, snapshots, metrics, float(stats[0]),
                            float(stats[1]), float(stats[2]), fp)
