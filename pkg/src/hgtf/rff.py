"""Random-Fourier-feature surrogate for the GP value model.

The feature map interleaves cos/sin pairs per frequency (fixed layout, also
used by the model file), the weight vector gets a zero-mean Gaussian prior
with covariance I/M, and the variational posterior over weights is a full
Gaussian N(mu, L L^T). Nothing here ever materializes an N x N kernel
matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DomainError


@dataclass
class RffModel:
    """Realized surrogate parameters.

    frequencies: (M, d). weight_mean: (2M,). weight_chol: (2M, 2M) lower
    triangular with positive diagonal. tau = exp(log_tau) is the RBF
    inverse-squared-lengthscale; sigma2 = exp(log_sigma2) the noise variance.
    """

    frequencies: np.ndarray
    log_tau: float
    log_sigma2: float
    weight_mean: np.ndarray
    weight_chol: np.ndarray

    @property
    def num_freqs(self) -> int:
        return self.frequencies.shape[0]

    @property
    def input_dim(self) -> int:
        return self.frequencies.shape[1]

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.log_sigma2))


def feature_matrix(x, frequencies):
    """(B, 2M) interleaved [cos(z_m.x), sin(z_m.x)] features; generic over Tensors."""
    angles = x @ ad.transpose(frequencies)  # (B, M)
    b, m = ad.value_of(angles).shape
    c = ad.reshape(ad.cos(angles), (b, m, 1))
    s = ad.reshape(ad.sin(angles), (b, m, 1))
    return ad.reshape(ad.concat([c, s], axis=2), (b, 2 * m))


def feature_map(x, model: RffModel) -> np.ndarray:
    """Feature vector of a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise DomainError(f"input must have length {model.input_dim}, got {x.shape}")
    return feature_matrix(x.reshape(1, -1), model.frequencies)[0]


def approx_kernel(x1, x2, model: RffModel) -> float:
    """Monte-Carlo RBF kernel estimate (kappa(0)/M) phi(x1).phi(x2)."""
    return float(feature_map(x1, model) @ feature_map(x2, model)) / model.num_freqs


def rbf_kernel(x1, x2, tau: float) -> float:
    """Exact RBF target exp(-tau ||x1 - x2||^2 / 2)."""
    diff = np.asarray(x1, dtype=np.float64) - np.asarray(x2, dtype=np.float64)
    return float(np.exp(-0.5 * tau * diff @ diff))


def gaussian_expected_log_lik(y, phi, mu, chol, sigma2):
    """E_q[log N(y | phi.g, sigma2)] per row of phi, in closed form.

    q(g) = N(mu, chol chol^T); the quadratic term phi^T L L^T phi is the
    predictive weight variance. Generic over Tensors.
    """
    resid = y - phi @ mu
    spread = phi @ chol
    var_f = ad.sum(spread * spread, axis=1)
    return -0.5 * np.log(2.0 * np.pi) - 0.5 * ad.log(sigma2) - (resid * resid + var_f) / (2.0 * sigma2)


def expected_log_lik(y: float, x, model: RffModel) -> float:
    """Closed-form expected Gaussian log likelihood of one observation."""
    phi = feature_map(x, model).reshape(1, -1)
    out = gaussian_expected_log_lik(float(y), phi, model.weight_mean, model.weight_chol, model.sigma2)
    return float(out[0])


def gaussian_kl(mu, chol, sum_log_diag, m):
    """KL(N(mu, chol chol^T) || N(0, I/M)) for feature dimension 2M."""
    tr = ad.sum(chol * chol)
    return 0.5 * (m * (tr + ad.sum(mu * mu)) - 2.0 * m - 2.0 * m * np.log(m) - 2.0 * sum_log_diag)


def kl_weights(model: RffModel) -> float:
    """KL divergence from the variational weight posterior to its prior."""
    diag = np.diagonal(model.weight_chol)
    if np.any(diag <= 0.0):
        raise DomainError("weight_chol must have a positive diagonal")
    return float(
        gaussian_kl(model.weight_mean, model.weight_chol, np.sum(np.log(diag)), model.num_freqs)
    )


def log_prior_frequencies(model: RffModel) -> float:
    """Sum of log N(z_m | 0, tau I) over the frequency matrix."""
    return float(frequency_log_prior(model.frequencies, model.log_tau))


def frequency_log_prior(frequencies, log_tau):
    """Generic form of the frequency prior; tau = exp(log_tau)."""
    m, d = ad.value_of(frequencies).shape
    tau = ad.exp(log_tau)
    quad = ad.sum(frequencies * frequencies) / (2.0 * tau)
    return -0.5 * m * d * np.log(2.0 * np.pi) - 0.5 * m * d * ad.log(tau) - quad


def predict(x, model: RffModel) -> tuple[float, float]:
    """Posterior predictive mean and variance of one entry value."""
    phi = feature_map(x, model)
    spread = phi @ model.weight_chol
    return float(phi @ model.weight_mean), float(spread @ spread + model.sigma2)


def predict_batch(x: np.ndarray, model: RffModel) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predictive means and variances for (B, d) inputs."""
    phi = feature_matrix(np.asarray(x, dtype=np.float64), model.frequencies)
    spread = phi @ model.weight_chol
    return phi @ model.weight_mean, np.sum(spread * spread, axis=1) + model.sigma2
