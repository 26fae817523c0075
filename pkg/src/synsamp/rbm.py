"""Binary restricted Boltzmann machine with synaptic-sampling updates.

Energy convention: E(x, z) = -z^T W x - b_hid^T z - b_vis^T x, with W of
shape (n_hidden, n_visible).  Exact likelihoods are computed by enumerating
the states of the smaller layer and summing out the other one analytically.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .langevin import SamplerConfig
from .priors import PriorSpec, log_prior_grad

MAX_ENUMERATION_UNITS = 24


class EnumerationLimitError(RuntimeError):
    """The network is too large for exact enumeration."""


@dataclass
class RbmParams:
    weights: np.ndarray       # (n_hidden, n_visible)
    bias_hidden: np.ndarray   # (n_hidden,)
    bias_visible: np.ndarray  # (n_visible,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias_hidden = np.asarray(self.bias_hidden, dtype=float)
        self.bias_visible = np.asarray(self.bias_visible, dtype=float)
        nh, nv = self.weights.shape
        if self.bias_hidden.shape != (nh,) or self.bias_visible.shape != (nv,):
            raise ValueError(
                f"bias shapes {self.bias_hidden.shape}, {self.bias_visible.shape} "
                f"do not match weights {self.weights.shape}")

    @property
    def n_hidden(self):
        return self.weights.shape[0]

    @property
    def n_visible(self):
        return self.weights.shape[1]

    def copy(self):
        return RbmParams(self.weights.copy(), self.bias_hidden.copy(), self.bias_visible.copy())

    def flat(self):
        return np.concatenate([self.weights.ravel(), self.bias_hidden, self.bias_visible])

    @classmethod
    def from_flat(cls, v, n_visible, n_hidden):
        v = np.asarray(v, dtype=float)
        nw = n_visible * n_hidden
        return cls(v[:nw].reshape(n_hidden, n_visible), v[nw:nw + n_hidden], v[nw + n_hidden:])

    def to_json(self):
        return json.dumps({"n_hidden": self.n_hidden, "n_visible": self.n_visible,
                           "weights": self.weights.ravel().tolist(),
                           "bias_hidden": self.bias_hidden.tolist(),
                           "bias_visible": self.bias_visible.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        w = np.asarray(d["weights"], dtype=float).reshape(d["n_hidden"], d["n_visible"])
        return cls(w, d["bias_hidden"], d["bias_visible"])


@dataclass
class CdSample:
    x: np.ndarray
    z: np.ndarray
    x_hat: np.ndarray
    z_hat: np.ndarray


def init_params(n_visible: int, n_hidden: int, rng: np.random.Generator) -> RbmParams:
    """Weights ~ N(0, 0.25^2), biases ~ N(-1, 0.25^2)."""
    if n_visible < 1 or n_hidden < 1:
        raise ValueError("layer sizes must be >= 1")
    w = rng.normal(0.0, 0.25, size=(n_hidden, n_visible))
    bh = rng.normal(-1.0, 0.25, size=n_hidden)
    bv = rng.normal(-1.0, 0.25, size=n_visible)
    return RbmParams(w, bh, bv)


def _check_visible(params, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.n_visible:
        raise ValueError(f"visible pattern has length {x.shape[-1]}, expected {params.n_visible}")
    return x


def hidden_activation_prob(params: RbmParams, x):
    x = _check_visible(params, x)
    return expit(x @ params.weights.T + params.bias_hidden)


def visible_activation_prob(params: RbmParams, z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != params.n_hidden:
        raise ValueError(f"hidden pattern has length {z.shape[-1]}, expected {params.n_hidden}")
    return expit(z @ params.weights + params.bias_visible)


def _bernoulli(p, rng):
    return (rng.random(np.shape(p)) < p).astype(float)


def binarize(gray, rng=None, mode="stochastic"):
    """Clamp gray levels in [0, 1] to binary visible states.

    ``stochastic`` sets each unit to 1 with probability equal to its gray
    level; ``threshold`` uses gray >= 0.5 and needs no rng.
    """
    gray = np.asarray(gray, dtype=float)
    if np.any((gray < 0) | (gray > 1)):
        raise ValueError("gray levels must lie in [0, 1]")
    if mode == "threshold":
        return (gray >= 0.5).astype(float)
    if mode != "stochastic":
        raise ValueError(f"unknown binarization mode {mode!r}")
    return _bernoulli(gray, rng)


def cd_sample(params: RbmParams, x, k_cycles: int, rng) -> CdSample:
    """Wake state plus the reconstruction after ``k_cycles`` visible/hidden updates."""
    if k_cycles < 1:
        raise ValueError("k_cycles must be >= 1")
    x = _check_visible(params, x)
    z = _bernoulli(hidden_activation_prob(params, x), rng)
    zh = z
    for _ in range(k_cycles):
        xh = _bernoulli(visible_activation_prob(params, zh), rng)
        zh = _bernoulli(hidden_activation_prob(params, xh), rng)
    return CdSample(x, z, xh, zh)


def cd_gradient(params: RbmParams, x, k_cycles: int, rng):
    """Contrastive-divergence estimates (dW, db_hid, db_vis).

    A batch of patterns (rows of ``x``) returns the mean over the batch.
    """
    s = cd_sample(params, x, k_cycles, rng)
    if s.x.ndim == 1:
        dw = np.outer(s.z, s.x) - np.outer(s.z_hat, s.x_hat)
        return dw, s.z - s.z_hat, s.x - s.x_hat
    n = len(s.x)
    dw = (s.z.T @ s.x - s.z_hat.T @ s.x_hat) / n
    return dw, (s.z - s.z_hat).mean(axis=0), (s.x - s.x_hat).mean(axis=0)


def _all_states(n):
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def _guard(params, max_units):
    if params.n_visible + params.n_hidden > max_units:
        raise EnumerationLimitError(
            f"exact enumeration limited to {max_units} units, "
            f"network has {params.n_visible + params.n_hidden}")


def log_partition(params: RbmParams, max_units=MAX_ENUMERATION_UNITS) -> float:
    _guard(params, max_units)
    if params.n_hidden <= params.n_visible:
        z = _all_states(params.n_hidden)
        a = z @ params.bias_hidden + np.logaddexp(0, z @ params.weights + params.bias_visible).sum(1)
    else:
        x = _all_states(params.n_visible)
        a = x @ params.bias_visible + np.logaddexp(0, x @ params.weights.T + params.bias_hidden).sum(1)
    return float(logsumexp(a))


def log_unnormalized(params: RbmParams, x):
    """log sum_z exp(-E(x, z)) for each visible pattern."""
    x = np.atleast_2d(_check_visible(params, x))
    return x @ params.bias_visible + np.logaddexp(0, x @ params.weights.T + params.bias_hidden).sum(1)


def log_prob_visible(params: RbmParams, x, max_units=MAX_ENUMERATION_UNITS):
    return log_unnormalized(params, x) - log_partition(params, max_units)


def exact_log_likelihood(params: RbmParams, data, max_units=MAX_ENUMERATION_UNITS) -> float:
    """Average log p(x) over the data set."""
    return float(np.mean(log_prob_visible(params, data, max_units)))


def _model_statistics(params):
    """E[z x^T], E[z], E[x] under the model distribution."""
    if params.n_hidden <= params.n_visible:
        z = _all_states(params.n_hidden)
        a = z @ params.bias_hidden + np.logaddexp(0, z @ params.weights + params.bias_visible).sum(1)
        p = np.exp(a - logsumexp(a))
        ex = expit(z @ params.weights + params.bias_visible)  # E[x | z]
        return (z * p[:, None]).T @ ex, p @ z, p @ ex
    x = _all_states(params.n_visible)
    a = x @ params.bias_visible + np.logaddexp(0, x @ params.weights.T + params.bias_hidden).sum(1)
    p = np.exp(a - logsumexp(a))
    ez = expit(x @ params.weights.T + params.bias_hidden)  # E[z | x]
    return (ez * p[:, None]).T @ x, p @ ez, p @ x


def exact_log_likelihood_grad(params: RbmParams, data, max_units=MAX_ENUMERATION_UNITS) -> RbmParams:
    """Gradient of ``exact_log_likelihood`` in all parameters (returned as RbmParams)."""
    _guard(params, max_units)
    x = np.atleast_2d(_check_visible(params, data))
    ez = hidden_activation_prob(params, x)
    data_zx = ez.T @ x / len(x)
    model_zx, model_z, model_x = _model_statistics(params)
    return RbmParams(data_zx - model_zx, ez.mean(0) - model_z, x.mean(0) - model_x)


def sampling_update(params: RbmParams, x, weight_prior: PriorSpec, cfg: SamplerConfig,
                    rng: np.random.Generator, k_cycles: int = 5, noise: bool = True) -> RbmParams:
    """One synaptic-sampling step with a CD-k likelihood estimate.

    Weights get the prior gradient, the N-scaled CD estimate and
    sqrt(2 eta T) Gaussian noise; biases have no prior.  ``noise=False``
    removes the diffusion term (plain CD learning when the prior is uniform).
    """
    eta = cfg.eta
    n = cfg.dataset_size
    dw, dbh, dbv = cd_gradient(params, x, k_cycles, rng)
    w = params.weights + eta * (log_prior_grad(params.weights, weight_prior) + n * dw)
    bh = params.bias_hidden + eta * n * dbh
    bv = params.bias_visible + eta * n * dbv
    if noise and cfg.temperature > 0:
        s = np.sqrt(2.0 * eta * cfg.temperature)
        w = w + s * rng.standard_normal(w.shape)
        bh = bh + s * rng.standard_normal(bh.shape)
        bv = bv + s * rng.standard_normal(bv.shape)
    return RbmParams(w, bh, bv)


def reconstruction_cross_entropy(params: RbmParams, data) -> float:
    """Mean-field reconstruction cross-entropy; a likelihood proxy for large nets."""
    x = np.atleast_2d(_check_visible(params, data))
    p = visible_activation_prob(params, hidden_activation_prob(params, x))
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(np.sum(x * np.log(p) + (1 - x) * np.log1p(-p), axis=1)))


def weight_histogram(params: RbmParams, bins=80, value_range=(-4.0, 4.0)):
    return np.histogram(params.weights.ravel(), bins=bins, range=value_range)


def write_weight_histogram(params: RbmParams, path, bins=80, value_range=(-4.0, 4.0)):
    counts, edges = weight_histogram(params, bins, value_range)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
