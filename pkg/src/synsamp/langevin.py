"""Synaptic-sampling dynamics for an arbitrary parameter vector.

The integrator is Euler-Maruyama applied to

    dtheta_i = (b_i * dlog p_S/dtheta_i + b_i * dlog p_N/dtheta_i + T * b'_i) dt
               + sqrt(2 T b_i) dW_i

with b_i = b(theta_i) the (optionally parameter dependent) sampling speed.
In batch mode the likelihood gradient is summed over the whole data set; in
online mode a single input is presented per step and its gradient is scaled
by the data-set size N.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

NOISE_BLOCK = 4096
OVERFLOW_GUARD = 1e150


class NumericalError(ArithmeticError):
    """A gradient or parameter became non-finite."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass
class SamplerConfig:
    learning_rate: float = 1e-3  # b, in 1/time units of dt
    temperature: float = 1.0
    dataset_size: int = 1
    dt: float = 1.0
    clip_lo: Optional[float] = None
    clip_hi: Optional[float] = None
    max_step: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if int(self.dataset_size) < 1:
            raise ValueError(f"dataset_size must be a positive integer, got {self.dataset_size}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if (self.clip_lo is not None and self.clip_hi is not None
                and not self.clip_lo < self.clip_hi):
            raise ValueError("clip_lo must be < clip_hi")
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be > 0")

    @property
    def eta(self) -> float:
        return self.learning_rate * self.dt


@dataclass
class ParameterState:
    values: np.ndarray
    step_count: int = 0
    time: float = 0.0

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))


class Drift:
    """Gradient provider for the sampling dynamics.

    Subclasses implement ``prior_grad`` and ``likelihood_grad``.  With
    ``index=None`` the likelihood gradient is the sum over all ``n_data``
    inputs; with an integer index it is the gradient for that single input.
    ``hidden`` carries a network response for models with hidden states.

    ``speed``/``speed_grad`` give b(theta) and b'(theta); the defaults are the
    constant learning rate from the config.  ``log_prior``/``log_likelihood``
    are optional and only used by gradient checks.
    """

    n_data: int = 1

    def prior_grad(self, theta):
        raise NotImplementedError

    def likelihood_grad(self, theta, index=None, hidden=None):
        raise NotImplementedError

    def speed(self, theta, b):
        return np.full_like(theta, b)

    def speed_grad(self, theta, b):
        return np.zeros_like(theta)

    def log_prior(self, theta):
        raise NotImplementedError

    def log_likelihood(self, theta, index=None):
        raise NotImplementedError


class SpeedModulated(Drift):
    """Wraps a drift with a parameter-dependent sampling speed b(theta)."""

    def __init__(self, base: Drift, speed: Callable, speed_grad: Callable):
        self.base = base
        self._speed = speed
        self._speed_grad = speed_grad
        self.n_data = base.n_data

    def prior_grad(self, theta):
        return self.base.prior_grad(theta)

    def likelihood_grad(self, theta, index=None, hidden=None):
        return self.base.likelihood_grad(theta, index, hidden)

    def speed(self, theta, b):
        return self._speed(theta)

    def speed_grad(self, theta, b):
        return self._speed_grad(theta)

    def log_prior(self, theta):
        return self.base.log_prior(theta)

    def log_likelihood(self, theta, index=None):
        return self.base.log_likelihood(theta, index)


def tanh_speed(base: float = 1e-3, gain: float = 0.5):
    """b(theta) = base * (1 + gain * tanh(theta)) and its derivative."""
    if not 0 <= gain < 1:
        raise ValueError("gain must lie in [0, 1) to keep b(theta) positive")

    def speed(theta):
        return base * (1.0 + gain * np.tanh(theta))

    def speed_grad(theta):
        return base * gain / np.cosh(theta) ** 2

    return speed, speed_grad


@dataclass
class ChainTrajectory:
    samples: np.ndarray  # (n_snapshots, M)
    steps: np.ndarray
    times: np.ndarray
    burn_in: int
    thin: int
    final: Optional[ParameterState] = field(default=None, repr=False)

    def __len__(self):
        return len(self.samples)

    def pooled(self) -> "ChainTrajectory":
        """Treat the M columns as replicas of one scalar parameter."""
        m = self.samples.shape[1]
        return ChainTrajectory(self.samples.T.reshape(-1, 1),
                               np.tile(self.steps, m), np.tile(self.times, m),
                               self.burn_in, self.thin)

    def to_csv(self, path):
        m = self.samples.shape[1]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "time"] + [f"theta_{i + 1}" for i in range(m)])
            for s, t, row in zip(self.steps, self.times, self.samples):
                w.writerow([int(s), repr(float(t))] + [repr(float(v)) for v in row])

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump({"burn_in": self.burn_in, "thin": self.thin,
                       "steps": self.steps.tolist(), "times": self.times.tolist(),
                       "samples": self.samples.tolist()}, f)


def wiener_increment(dt: float, rng: np.random.Generator, size=None):
    """Draw W(t + dt) - W(t) ~ Normal(0, dt)."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return np.sqrt(dt) * rng.standard_normal(size)


def _check_finite(name, g):
    bad = ~np.isfinite(g)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"non-finite {name} at parameter index {i}", index=i)


def _increment(theta, drift: Drift, cfg: SamplerConfig, nu, index, hidden):
    b = drift.speed(theta, cfg.learning_rate)
    pg = drift.prior_grad(theta)
    _check_finite("prior gradient", pg)
    lg = drift.likelihood_grad(theta, index, hidden)
    _check_finite("likelihood gradient", lg)
    if index is not None:
        lg = cfg.dataset_size * lg
    T = cfg.temperature
    mean = cfg.dt * (b * (pg + lg))
    if T > 0:
        mean = mean + cfg.dt * T * drift.speed_grad(theta, cfg.learning_rate)
        d = mean + np.sqrt(2.0 * T * cfg.dt * b) * nu
    else:
        d = mean
    if cfg.max_step is not None:
        d = np.clip(d, -cfg.max_step, cfg.max_step)
    new = theta + d
    if cfg.clip_lo is not None or cfg.clip_hi is not None:
        new = np.clip(new, cfg.clip_lo, cfg.clip_hi)
    return new


def discrete_update(state: ParameterState, drift: Drift, cfg: SamplerConfig,
                    rng: np.random.Generator, index=None, hidden=None,
                    noise=None) -> ParameterState:
    """One Euler-Maruyama step.  ``index=None`` uses the full-data gradient."""
    theta = state.values
    nu = rng.standard_normal(theta.shape) if noise is None else np.asarray(noise, float)
    new = _increment(theta, drift, cfg, nu, index, hidden)
    return ParameterState(new, state.step_count + 1, state.time + cfg.dt)


def default_burn_in(n_steps: int) -> int:
    return n_steps // 5


def run_chain(initial: ParameterState, drift: Drift, cfg: SamplerConfig,
              n_steps: int, burn_in: Optional[int] = None, thin: int = 1,
              mode: str = "batch", order: str = "cyclic",
              hidden_sampler: Optional[Callable] = None) -> ChainTrajectory:
    """Integrate the dynamics for ``n_steps`` and keep thinned post-burn-in snapshots.

    ``mode='online'`` presents one input per step, in cyclic order or drawn
    uniformly at random (``order='random'``).  A ``hidden_sampler(theta,
    index, rng)`` draws the network response for the current input before
    each parameter update.  All randomness derives from ``cfg.seed``.
    """
    if burn_in is None:
        burn_in = default_burn_in(n_steps)
    if n_steps <= burn_in:
        raise ValueError(f"n_steps ({n_steps}) must exceed burn_in ({burn_in})")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    if mode not in ("batch", "online"):
        raise ValueError(f"mode must be 'batch' or 'online', got {mode!r}")
    if order not in ("cyclic", "random"):
        raise ValueError(f"order must be 'cyclic' or 'random', got {order!r}")
    if hidden_sampler is not None and mode != "online":
        raise ValueError("hidden-state sampling requires online mode")

    noise_rng, order_rng, hidden_rng = np.random.default_rng(cfg.seed).spawn(3)
    theta = initial.values.copy()
    m = theta.size
    n_data = drift.n_data
    start_step = initial.step_count
    n_keep = len(range(burn_in, n_steps, thin))
    samples = np.empty((n_keep, m))
    steps = np.empty(n_keep, dtype=np.int64)
    k = 0
    for block_start in range(0, n_steps, NOISE_BLOCK):
        nb = min(NOISE_BLOCK, n_steps - block_start)
        noise = noise_rng.standard_normal((nb, m))
        if mode == "online" and order == "random":
            picks = order_rng.integers(0, n_data, size=nb)
        for j in range(nb):
            step = block_start + j
            index = hidden = None
            if mode == "online":
                index = int(picks[j]) if order == "random" else step % n_data
                if hidden_sampler is not None:
                    hidden = hidden_sampler(theta, index, hidden_rng)
            theta = _increment(theta, drift, cfg, noise[j], index, hidden)
            if step >= burn_in and (step - burn_in) % thin == 0:
                samples[k] = theta
                steps[k] = start_step + step + 1
                k += 1
    if not np.all(np.isfinite(theta)):
        raise NumericalError("chain diverged to non-finite values")
    final = ParameterState(theta, start_step + n_steps, initial.time + n_steps * cfg.dt)
    return ChainTrajectory(samples, steps, initial.time + (steps - start_step) * cfg.dt,
                           burn_in, thin, final)


def run_chain_with_hidden(initial, drift, cfg, hidden_sampler, n_steps,
                          burn_in=None, thin=1, order="cyclic") -> ChainTrajectory:
    """Online sampling with concurrent network-state sampling (stochastic EM form)."""
    return run_chain(initial, drift, cfg, n_steps, burn_in, thin, mode="online",
                     order=order, hidden_sampler=hidden_sampler)


def stationary_moments(traj: ChainTrajectory, min_samples: int = 100):
    """Empirical mean vector and covariance matrix of the kept snapshots."""
    x = np.asarray(traj.samples, dtype=float)
    if x.ndim != 2 or len(x) < min_samples:
        raise ValueError(f"need at least {min_samples} snapshots, got {len(x)}")
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, bias=False))
    return mean, cov


def ks_distance(traj, cdf: Callable) -> float:
    """Kolmogorov-Smirnov statistic between a scalar chain and an analytic CDF."""
    x = traj.samples if isinstance(traj, ChainTrajectory) else traj
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError("ks_distance needs a scalar parameter chain")
        x = x[:, 0]
    if x.size == 0:
        raise ValueError("empty trajectory")
    return float(stats.kstest(x, cdf).statistic)


def ks_critical_value(n: int, alpha: float = 0.05) -> float:
    return float(stats.kstwo.ppf(1.0 - alpha, n))


def effective_sample_size(x) -> float:
    """Batch-means estimate of the effective number of independent samples."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    n_batches = max(int(np.sqrt(n)), 2)
    size = n // n_batches
    means = x[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    var_bm = size * means.var(ddof=1)
    v = x.var(ddof=1)
    if var_bm <= 0:
        return float(n)
    return float(n * v / var_bm)


def standard_error(x) -> float:
    """Batch-means standard error of the mean of a correlated series."""
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(x.var(ddof=1) / effective_sample_size(x)))


def lag1_autocorrelation(x) -> float:
    x = np.asarray(x, dtype=float) - np.mean(x)
    return float(np.dot(x[:-1], x[1:]) / np.dot(x, x))


def anneal_to_map(initial: ParameterState, drift: Drift, cfg: SamplerConfig,
                  schedule: Optional[Callable[[int], float]] = None,
                  max_steps: int = 100_000, tol: float = 1e-13) -> ParameterState:
    """Run the dynamics with a temperature schedule decreasing to zero.

    ``schedule(step)`` returns the temperature; ``None`` means T = 0 from the
    start, i.e. deterministic gradient ascent on the log posterior.  Stops once
    the schedule has reached zero and the largest update falls below ``tol``.
    """
    if schedule is None:
        schedule = lambda step: 0.0  # noqa: E731
    rng = np.random.default_rng(cfg.seed)
    theta = initial.values.copy()
    prev_T = np.inf
    for step in range(max_steps):
        T = float(schedule(step))
        if T > prev_T + 1e-15:
            raise ValueError("temperature schedule must be non-increasing")
        prev_T = T
        c = replace(cfg, temperature=T)
        nu = rng.standard_normal(theta.shape) if T > 0 else None
        new = _increment(theta, drift, c, nu, None, None)
        if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > OVERFLOW_GUARD:
            raise NumericalError(f"annealing diverged at step {step}")
        delta = np.max(np.abs(new - theta))
        theta = new
        if T == 0.0 and delta < tol:
            return ParameterState(theta, initial.step_count + step + 1,
                                  initial.time + (step + 1) * cfg.dt)
    return ParameterState(theta, initial.step_count + max_steps,
                          initial.time + max_steps * cfg.dt)


def check_drift_gradients(drift: Drift, points: Sequence[np.ndarray], h: float = 1e-5):
    """Largest relative error between analytic gradients and central differences.

    Returns (prior_error, likelihood_error) over all ``points``.
    """
    def rel_err(analytic, numeric):
        scale = np.maximum(np.abs(numeric), 1e-6)
        return float(np.max(np.abs(analytic - numeric) / scale))

    worst_p = worst_l = 0.0
    for theta in points:
        theta = np.asarray(theta, dtype=float)
        num_p = np.empty_like(theta)
        num_l = np.empty_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            # difference before summing so unperturbed terms cancel exactly
            num_p[i] = np.sum(drift.log_prior(theta + e) - drift.log_prior(theta - e)) / (2 * h)
            num_l[i] = (drift.log_likelihood(theta + e) - drift.log_likelihood(theta - e)) / (2 * h)
        worst_p = max(worst_p, rel_err(drift.prior_grad(theta), num_p))
        worst_l = max(worst_l, rel_err(drift.likelihood_grad(theta), num_l))
    return worst_p, worst_l
