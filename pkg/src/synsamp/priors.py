"""Factorized parameter priors: Gaussian, two-component Gaussian mixture, uniform.

Every function works elementwise, so a scalar prior spec applies independently
to each entry of a parameter array.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, logsumexp

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

KINDS = ("gaussian", "gaussian_mixture2", "uniform")


@dataclass(frozen=True)
class PriorSpec:
    """Per-parameter prior.

    Only the fields relevant to ``kind`` are read.  ``lo``/``hi`` bound the
    uniform prior for sampling; its gradient is identically zero either way.
    """

    kind: str = "uniform"
    mu: float = 0.0
    sigma: float = 1.0
    weight1: float = 0.5
    mu1: float = 1.0
    sigma1: float = 0.15
    mu2: float = 0.0
    sigma2: float = 0.15
    lo: Optional[float] = None
    hi: Optional[float] = None

    def __post_init__(self):
        validate(self)

    @classmethod
    def gaussian(cls, mu: float, sigma: float) -> "PriorSpec":
        return cls(kind="gaussian", mu=mu, sigma=sigma)

    @classmethod
    def mixture(cls, weight1: float, mu1: float, sigma1: float,
                mu2: float, sigma2: float) -> "PriorSpec":
        return cls(kind="gaussian_mixture2", weight1=weight1, mu1=mu1,
                   sigma1=sigma1, mu2=mu2, sigma2=sigma2)

    @classmethod
    def uniform(cls, lo: Optional[float] = None,
                hi: Optional[float] = None) -> "PriorSpec":
        return cls(kind="uniform", lo=lo, hi=hi)

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": self.kind, "mu": self.mu, "sigma": self.sigma}
        if self.kind == "gaussian_mixture2":
            return {"kind": self.kind, "weight1": self.weight1,
                    "mu1": self.mu1, "sigma1": self.sigma1,
                    "mu2": self.mu2, "sigma2": self.sigma2}
        out = {"kind": self.kind}
        if self.lo is not None:
            out["lo"] = self.lo
        if self.hi is not None:
            out["hi"] = self.hi
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        d = dict(d)
        kind = d.pop("kind", "uniform")
        return cls(kind=kind, **{k: float(v) for k, v in d.items()})


def validate(spec: PriorSpec) -> None:
    if spec.kind not in KINDS:
        raise ValueError(f"unknown prior kind {spec.kind!r}; expected one of {KINDS}")
    if spec.kind == "gaussian":
        if not spec.sigma > 0:
            raise ValueError(f"gaussian prior needs sigma > 0, got {spec.sigma}")
    elif spec.kind == "gaussian_mixture2":
        if not 0.0 < spec.weight1 < 1.0:
            raise ValueError(f"mixture weight must lie in (0, 1), got {spec.weight1}")
        if not (spec.sigma1 > 0 and spec.sigma2 > 0):
            raise ValueError("mixture component sigmas must be > 0")
    else:
        if spec.lo is not None and spec.hi is not None and not spec.lo < spec.hi:
            raise ValueError(f"uniform prior needs lo < hi, got [{spec.lo}, {spec.hi}]")


# The two priors used by the experiments.
WTA_PRIOR = PriorSpec.gaussian(0.5, 1.0)
RBM_BIMODAL_PRIOR = PriorSpec.mixture(0.5, 1.0, 0.15, 0.0, 0.15)


def _component_logpdf(theta, mu, sigma):
    z = (theta - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - _LOG_SQRT_2PI


def _mixture_terms(theta, spec):
    return np.stack([
        np.log(spec.weight1) + _component_logpdf(theta, spec.mu1, spec.sigma1),
        np.log1p(-spec.weight1) + _component_logpdf(theta, spec.mu2, spec.sigma2),
    ])


def responsibilities(theta, spec: PriorSpec) -> np.ndarray:
    """Posterior component memberships of a mixture prior, shape (2, *theta.shape)."""
    if spec.kind != "gaussian_mixture2":
        raise ValueError("responsibilities are only defined for the mixture prior")
    theta = np.asarray(theta, dtype=float)
    terms = _mixture_terms(theta, spec)
    r1 = expit(terms[0] - terms[1])
    return np.stack([r1, 1.0 - r1])


def log_prior_density(theta, spec: PriorSpec):
    """Log density per parameter.  The unbounded uniform prior returns 0."""
    validate(spec)
    theta = np.asarray(theta, dtype=float)
    if spec.kind == "gaussian":
        out = _component_logpdf(theta, spec.mu, spec.sigma)
    elif spec.kind == "gaussian_mixture2":
        out = logsumexp(_mixture_terms(theta, spec), axis=0)
    elif spec.lo is not None and spec.hi is not None:
        out = np.full_like(theta, -np.log(spec.hi - spec.lo))
    else:
        out = np.zeros_like(theta)
    return out[()] if out.ndim == 0 else out


def log_prior_grad(theta, spec: PriorSpec):
    """d/dtheta log p(theta), elementwise."""
    validate(spec)
    theta = np.asarray(theta, dtype=float)
    if spec.kind == "gaussian":
        out = -(theta - spec.mu) / spec.sigma ** 2
    elif spec.kind == "gaussian_mixture2":
        r = responsibilities(theta, spec)
        out = (r[0] * (-(theta - spec.mu1) / spec.sigma1 ** 2)
               + r[1] * (-(theta - spec.mu2) / spec.sigma2 ** 2))
    else:
        out = np.zeros_like(theta)
    return out[()] if out.ndim == 0 else out


def sample_prior(spec: PriorSpec, rng: np.random.Generator, size=None):
    """I.i.d. draws from the prior.  A uniform prior must be bounded."""
    validate(spec)
    if spec.kind == "gaussian":
        return rng.normal(spec.mu, spec.sigma, size=size)
    if spec.kind == "gaussian_mixture2":
        first = rng.random(size=size) < spec.weight1
        a = rng.normal(spec.mu1, spec.sigma1, size=size)
        b = rng.normal(spec.mu2, spec.sigma2, size=size)
        return np.where(first, a, b)
    if spec.lo is None or spec.hi is None:
        raise ValueError("cannot sample an unbounded uniform prior; set lo and hi")
    return rng.uniform(spec.lo, spec.hi, size=size)
