"""Small models with known posteriors, used to validate the sampler."""
from __future__ import annotations

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .langevin import Drift
from .priors import PriorSpec, log_prior_density, log_prior_grad


class ConjugateGaussian(Drift):
    """Unknown mean of Gaussian observations with a Gaussian prior.

    ``replicas`` independent copies of the scalar parameter are sampled side by
    side; each copy has the same posterior.
    """

    def __init__(self, observations, noise_var=1.0, prior=PriorSpec.gaussian(0.0, 1.0),
                 replicas=1):
        if prior.kind != "gaussian":
            raise ValueError("conjugate model needs a gaussian prior")
        self.x = np.asarray(observations, dtype=float)
        self.noise_var = float(noise_var)
        self.prior = prior
        self.replicas = int(replicas)
        self.n_data = len(self.x)
        self._sum = float(self.x.sum())

    def prior_grad(self, theta):
        return log_prior_grad(theta, self.prior)

    def likelihood_grad(self, theta, index=None, hidden=None):
        if index is None:
            return (self._sum - self.n_data * theta) / self.noise_var
        return (self.x[index] - theta) / self.noise_var

    def log_prior(self, theta):
        return log_prior_density(theta, self.prior)

    def log_likelihood(self, theta, index=None):
        x = self.x if index is None else self.x[index:index + 1]
        theta = np.atleast_1d(theta)
        r = x[None, :] - theta[:, None]
        return float(np.sum(-0.5 * r ** 2 / self.noise_var
                            - 0.5 * np.log(2 * np.pi * self.noise_var)))

    def posterior(self, temperature=1.0):
        """Mean and variance of p(theta|x)^(1/T), normalized."""
        precision = 1.0 / self.prior.sigma ** 2 + self.n_data / self.noise_var
        mean = (self.prior.mu / self.prior.sigma ** 2 + self._sum / self.noise_var) / precision
        return mean, temperature / precision

    def posterior_cdf(self, temperature=1.0):
        mean, var = self.posterior(temperature)
        return stats.norm(mean, np.sqrt(var)).cdf

    def initial(self):
        return np.full(self.replicas, self.prior.mu)


class GaussianMixtureMeans(Drift):
    """Two-component, unit-variance mixture with unknown component means.

    theta = (mu_1, mu_2).  The component label of each observation is the
    hidden state; ``sample_hidden`` draws it from p(label | x_n, theta).
    """

    def __init__(self, observations, weights=(0.5, 0.5),
                 priors=(PriorSpec.gaussian(-2.0, 1.0), PriorSpec.gaussian(2.0, 1.0))):
        self.x = np.asarray(observations, dtype=float)
        self.log_w = np.log(np.asarray(weights, dtype=float))
        self.priors = priors
        self.n_data = len(self.x)

    def _log_joint_terms(self, theta, x):
        # (n, 2): log w_k + log N(x | mu_k, 1)
        return self.log_w[None, :] + stats.norm.logpdf(x[:, None], theta[None, :], 1.0)

    def responsibilities(self, theta, x):
        t = self._log_joint_terms(theta, x)
        return np.exp(t - logsumexp(t, axis=1, keepdims=True))

    def sample_hidden(self, theta, index, rng):
        r = self.responsibilities(theta, self.x[index:index + 1])[0]
        return int(rng.random() >= r[0])

    def prior_grad(self, theta):
        return np.array([log_prior_grad(theta[k], p) for k, p in enumerate(self.priors)])

    def likelihood_grad(self, theta, index=None, hidden=None):
        if hidden is not None:
            g = np.zeros(2)
            g[hidden] = self.x[index] - theta[hidden]
            return g
        x = self.x if index is None else self.x[index:index + 1]
        r = self.responsibilities(theta, x)
        return np.sum(r * (x[:, None] - theta[None, :]), axis=0)

    def log_prior(self, theta):
        return np.array([log_prior_density(theta[k], p) for k, p in enumerate(self.priors)])

    def log_likelihood(self, theta, index=None):
        x = self.x if index is None else self.x[index:index + 1]
        return float(np.sum(logsumexp(self._log_joint_terms(np.asarray(theta), x), axis=1)))


class PriorOnly(Drift):
    """Drift with a zero likelihood; the stationary law is the prior itself."""

    def __init__(self, prior: PriorSpec, size=1):
        self.prior = prior
        self.size = size

    def prior_grad(self, theta):
        return log_prior_grad(theta, self.prior)

    def likelihood_grad(self, theta, index=None, hidden=None):
        return np.zeros_like(theta)

    def log_prior(self, theta):
        return log_prior_density(theta, self.prior)

    def log_likelihood(self, theta, index=None):
        return 0.0
