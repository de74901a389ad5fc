"""Log-density terms of the finite-projection HDP prior and the entry-index
likelihood.

Each mode keeps D_k active slots plus one aggregated slot (last position)
carrying the combined mass of all inactive nodes. The aggregated slot enters
the priors but never the data likelihood. All functions accept plain arrays
or autodiff Tensors and return the same kind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DomainError

# floor applied to simplex components before logs; softmax underflows at
# extreme parameters and log(0) would poison the whole objective
_SIMPLEX_FLOOR = 1e-300


@dataclass
class ModeParams:
    """Free (unconstrained) parameters for one tensor mode.

    beta_tilde: (D_k+1,) softmax parameters of the stick weights, last slot
    aggregating inactive mass. theta_tilde: (D_k, R_1) unconstrained
    locations, mapped into the box by alpha * sigmoid. gamma_tilde: (R_2,)
    softplus parameters of the concentration scalars. omega_tilde:
    (R_2, D_k+1) softmax parameters of the sociabilities, row per community.
    """

    beta_tilde: np.ndarray
    theta_tilde: np.ndarray
    gamma_tilde: np.ndarray
    omega_tilde: np.ndarray

    @property
    def num_active(self) -> int:
        return len(ad.value_of(self.beta_tilde)) - 1

    def beta(self):
        return softmax(self.beta_tilde)

    def theta(self, alpha: float):
        return alpha * ad.sigmoid(self.theta_tilde)

    def gammas(self):
        return ad.softplus(self.gamma_tilde)

    def omega(self):
        return softmax(self.omega_tilde)


def softmax(v):
    """Probability vector (rows, for 2-D input); max-shifted for overflow safety."""
    shift = ad.value_of(v).max(axis=-1, keepdims=True)
    e = ad.exp(v - shift)
    return e / ad.sum(e, axis=-1, keepdims=True)


def log_prior_beta(beta, alpha_tilde):
    """Transformed stick-breaking log prior of a weight vector.

    Undoes beta_j = xi_j * prod_{t<j}(1 - xi_t) back to the independent
    Beta(1, alpha_tilde) fractions; the change of variables contributes
    -log Lambda_j per slot from the lower-triangular Jacobian. The final
    (aggregated) component is determined by the rest and carries no term.
    """
    vals = ad.value_of(beta)
    if vals.ndim != 1 or len(vals) < 2:
        raise DomainError("beta must be a 1-D simplex with an aggregated slot")
    d = len(vals) - 1
    lam_vals = 1.0 - np.concatenate([[0.0], np.cumsum(vals[:d])])
    if np.any(lam_vals[:d] <= 0.0):
        raise DomainError("remaining stick mass must stay positive")
    active = ad.clamp(beta[:d], _SIMPLEX_FLOOR, None)
    # Lambda_j = 1 - sum_{t<j} beta_t; Lambda_{j+1} = Lambda_j - beta_j
    lam = 1.0 - ad.cumsum(active) + active
    lam_next = ad.clamp(lam - active, _SIMPLEX_FLOOR, None)
    # Beta(x | 1, a) density is a * (1-x)^(a-1) and 1 - beta_j/Lambda_j = Lambda_{j+1}/Lambda_j
    log_lam = ad.log(lam)
    terms = np.log(alpha_tilde) + (alpha_tilde - 1.0) * (ad.log(lam_next) - log_lam) - log_lam
    return ad.sum(terms)


def stick_log_jacobian(beta) -> float:
    """Analytic log |J| of the weights -> stick-fractions map: sum_j -log Lambda_j."""
    vals = ad.value_of(beta)
    d = len(vals) - 1
    lam = 1.0 - np.concatenate([[0.0], np.cumsum(vals[: d - 1])])
    return float(-np.sum(np.log(lam)))


def log_dirichlet(omega, gamma, beta):
    """Dirichlet log density of sociabilities given concentration gamma * beta."""
    ov, bv = ad.value_of(omega), ad.value_of(beta)
    if ov.shape != bv.shape:
        raise DomainError("omega and beta must have matching lengths")
    conc_vals = ad.value_of(gamma) * bv
    if np.any((ov <= 0.0) & (conc_vals < 1.0)):
        raise DomainError("zero component with concentration < 1 has no density")
    conc = gamma * beta
    log_omega = ad.log(ad.clamp(omega, _SIMPLEX_FLOOR, None))
    return (
        ad.gammaln(gamma)
        - ad.sum(ad.gammaln(conc))
        + ad.sum((conc - 1.0) * log_omega)
    )


def log_gamma_prior(gamma, alpha_tilde):
    """Exponential(rate alpha_tilde) log density: log a - a * gamma."""
    return np.log(alpha_tilde) - alpha_tilde * gamma


def batch_entry_log_prob(indices: np.ndarray, omega_tilde_list, r2: int):
    """log w_i for each index row: logsumexp over communities of summed
    per-mode log sociabilities, minus log R_2. Generic over Tensors."""
    indices = np.asarray(indices, dtype=np.int64)
    per_r = None
    for k, om in enumerate(omega_tilde_list):
        log_om = om - ad.logsumexp(om, axis=1, keepdims=True)  # (R_2, D_k+1)
        picked = log_om[:, indices[:, k]]  # (R_2, B)
        per_r = picked if per_r is None else per_r + picked
    return ad.logsumexp(per_r, axis=0) - np.log(r2)


def entry_log_prob(index, mode_params: list[ModeParams], r2: int, allow_aggregated: bool = False):
    """log probability of one entry index under the normalized rate measure.

    Observed entries live in active slots; the aggregated slot is rejected
    unless allow_aggregated is set (used by normalization checks that sum
    over the entire partition grid).
    """
    index = np.asarray(index, dtype=np.int64).reshape(1, -1)
    if len(mode_params) != index.shape[1]:
        raise DomainError("index arity does not match number of modes")
    for k, mp in enumerate(mode_params):
        n_slots = ad.value_of(mp.omega_tilde).shape[1]
        if not 0 <= index[0, k] < n_slots:
            raise DomainError(f"index {index[0, k]} out of range for mode {k}")
        if not allow_aggregated and index[0, k] == n_slots - 1:
            raise DomainError(
                f"index {index[0, k]} hits the aggregated slot of mode {k}; "
                "observed entries must be active"
            )
    out = batch_entry_log_prob(index, [mp.omega_tilde for mp in mode_params], r2)
    return out if ad.is_tensor(out) else float(out[0])
