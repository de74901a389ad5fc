"""Generative simulator for the sparse tensor-variate process, plus the
dense Bernoulli baseline samplers and the sparsity-curve experiment driver.

Sampling follows the two-step Poisson-random-measure recipe: draw the total
mass of the product rate measure through the Gamma chain, draw the point
count from Poisson(mass), then place points i.i.d. from the normalized
measure, realized by truncated two-level stick-breaking weights.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DataError

# shape floors keep degenerate Gamma/Beta draws from underflowing to zero
_SHAPE_FLOOR = 1e-12
_STICK_EPS = 1e-12


@dataclass
class StpConfig:
    """Process parameters: box scale alpha, factor counts r1/r2, mode count."""

    alpha: float
    r1: int = 1
    r2: int = 1
    num_modes: int = 3
    truncation_tol: float = 1e-10
    max_atoms: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0 or self.r1 < 1 or self.r2 < 1 or self.num_modes < 2:
            raise DataError("invalid process configuration")
        if self.truncation_tol <= 0 or self.max_atoms < 1:
            raise DataError("invalid truncation settings")

    @property
    def alpha_tilde(self) -> float:
        return self.alpha**self.r1


@dataclass
class HdpWeights:
    """A truncated realization of the two-level weights.

    beta[k] is mode k's top-level weight vector; omega[k] is an
    (R_2, len(beta[k])) array of second-level weights sharing the same atom
    order; gamma[k, r] the concentration draws; theta[k] the (J_k, R_1) atom
    locations in the box.
    """

    alpha_tilde: float
    beta: list[np.ndarray]
    omega: list[np.ndarray]
    gamma: np.ndarray
    theta: list[np.ndarray] = field(default_factory=list)

    @property
    def num_modes(self) -> int:
        return len(self.beta)

    @property
    def r2(self) -> int:
        return self.omega[0].shape[0]


@dataclass
class SampledTensor:
    """Point-process draw: unique entry indices with multiplicities."""

    entries: np.ndarray        # (n_distinct, K) atom indices
    counts: np.ndarray         # (n_distinct,) point multiplicities
    active_dims: np.ndarray    # distinct nodes per mode
    total_points: int

    @property
    def distinct_entries(self) -> int:
        return self.entries.shape[0]

    @property
    def active_size(self) -> int:
        return int(np.prod(self.active_dims)) if self.total_points else 0


@dataclass
class SimulationResult:
    """Per-(alpha, r2) averages over replicates for the sparsity curves."""

    alpha: float
    r2: int
    replicates: int
    mean_entries: float
    mean_active_size: float
    mean_ratio: float


def _positive_gamma(shape, rng: np.random.Generator, size=None) -> np.ndarray:
    """Gamma(shape, 1) draws guarded against underflow to zero.

    Shapes are floored at 1e-12; draws that still underflow (tiny shapes put
    essentially all mass below float64 range) are resampled once and then
    pinned to a tiny positive constant. The mass distortion is negligible.
    """
    shape = np.maximum(np.asarray(shape, dtype=np.float64), _SHAPE_FLOOR)
    draws = np.asarray(rng.gamma(shape=shape, scale=1.0, size=size))
    zero = draws == 0.0
    if zero.any():
        draws[zero] = rng.gamma(shape=np.broadcast_to(shape, draws.shape)[zero], scale=1.0)
        draws[draws == 0.0] = 1e-300
    return draws


def sample_total_mass(cfg: StpConfig, rng: np.random.Generator) -> float:
    """Total mass of the product rate measure via the Gamma chain.

    One top-level total per mode, shared by that mode's R_2 second-level
    processes; the mass is the sum over communities of per-mode products.
    Its expectation is R_2 * alpha^(K * R_1).
    """
    top = _positive_gamma(np.full(cfg.num_modes, cfg.alpha_tilde), rng)
    w = _positive_gamma(np.tile(top, (cfg.r2, 1)), rng)  # (R_2, K)
    # the per-mode product can underflow even when every factor is positive
    return max(float(np.sum(np.prod(w, axis=1))), 1e-300)


def sample_entry_count(mass: float, rng: np.random.Generator) -> int:
    """Poisson point count for a given total mass."""
    if mass < 0:
        raise DataError("mass must be non-negative")
    return int(rng.poisson(mass))


def stick_break_top(
    alpha_tilde: float,
    rng: np.random.Generator,
    truncation_tol: float = 1e-10,
    max_atoms: int = 2000,
) -> np.ndarray:
    """Truncated stick-breaking weights with Beta(1, alpha_tilde) fractions.

    Stops once the unbroken remainder drops below truncation_tol or
    max_atoms is reached; the returned vector sums to 1 - remainder.
    """
    if alpha_tilde <= 0:
        raise DataError("alpha_tilde must be positive")
    weights: list[float] = []
    remaining = 1.0
    while remaining >= truncation_tol and len(weights) < max_atoms:
        frac = rng.beta(1.0, alpha_tilde)
        weights.append(frac * remaining)
        remaining *= 1.0 - frac
    return np.asarray(weights)


def stick_break_second(gamma: float, beta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Second-level weights over the same atoms as beta.

    Fractions follow Beta(gamma * beta_j, gamma * (1 - sum_{l<=j} beta_l));
    when the top-level stick is numerically exhausted the leftover mass is
    assigned to that atom and breaking stops. Output length equals beta's.
    """
    if gamma <= 0:
        raise DataError("gamma must be positive")
    beta = np.asarray(beta, dtype=np.float64)
    omega = np.zeros_like(beta)
    tail = 1.0 - np.cumsum(beta)
    remaining = 1.0
    for j in range(len(beta)):
        b_param = gamma * tail[j]
        if b_param <= _STICK_EPS:
            omega[j] = remaining
            break
        frac = rng.beta(max(gamma * beta[j], _SHAPE_FLOOR), b_param)
        omega[j] = frac * remaining
        remaining *= 1.0 - frac
    return omega


def sample_hdp_weights(cfg: StpConfig, rng: np.random.Generator) -> HdpWeights:
    """Draw a truncated two-level weight realization plus atom locations."""
    at = cfg.alpha_tilde
    beta, omega, theta = [], [], []
    # concentration draws use the scale convention (mean alpha_tilde), the
    # magnitude of the normalized second-level total mass
    gamma = rng.gamma(shape=1.0, scale=at, size=(cfg.num_modes, cfg.r2))
    gamma = np.maximum(gamma, _SHAPE_FLOOR)
    for k in range(cfg.num_modes):
        b = stick_break_top(at, rng, cfg.truncation_tol, cfg.max_atoms)
        om = np.stack([stick_break_second(gamma[k, r], b, rng) for r in range(cfg.r2)])
        beta.append(b)
        omega.append(om)
        theta.append(rng.uniform(0.0, cfg.alpha, size=(len(b), cfg.r1)))
    return HdpWeights(alpha_tilde=at, beta=beta, omega=omega, gamma=gamma, theta=theta)


def sample_entries_from_weights(
    weights: HdpWeights, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n i.i.d. entry indices from the normalized rate measure.

    Each point picks a community r uniformly, then one atom per mode from
    that community's sociabilities; this is the same distribution as the
    uniform mixture of product measures.
    """
    k, r2 = weights.num_modes, weights.r2
    out = np.empty((n, k), dtype=np.int64)
    if n == 0:
        return out
    rs = rng.integers(0, r2, size=n)
    for r in range(r2):
        rows = np.flatnonzero(rs == r)
        if rows.size == 0:
            continue
        for mode in range(k):
            w = weights.omega[mode][r]
            total = w.sum()
            if total <= 0:
                raise DataError("second-level weights sum to zero")
            out[rows, mode] = rng.choice(len(w), size=rows.size, p=w / total)
    return out


def sample_stp_tensor(cfg: StpConfig, rng: np.random.Generator) -> SampledTensor:
    """One full draw of the process: mass, Poisson count, then entry indices."""
    mass = sample_total_mass(cfg, rng)
    n = sample_entry_count(mass, rng)
    if n == 0:
        return SampledTensor(
            entries=np.empty((0, cfg.num_modes), dtype=np.int64),
            counts=np.empty(0, dtype=np.int64),
            active_dims=np.zeros(cfg.num_modes, dtype=np.int64),
            total_points=0,
        )
    weights = sample_hdp_weights(cfg, rng)
    points = sample_entries_from_weights(weights, n, rng)
    return tensor_from_points(points, n)


def tensor_from_points(points: np.ndarray, total_points: int) -> SampledTensor:
    """Collapse raw point indices into a SampledTensor with counts."""
    entries, counts = np.unique(points, axis=0, return_counts=True)
    active = np.asarray([len(np.unique(points[:, k])) for k in range(points.shape[1])])
    return SampledTensor(entries=entries, counts=counts, active_dims=active, total_points=total_points)


def run_sparsity_simulation(
    alphas,
    r2_values,
    replicates: int,
    r1: int = 1,
    num_modes: int = 3,
    truncation_tol: float = 1e-10,
    max_atoms: int = 2000,
    seed: int = 0,
    n_jobs: int = 1,
) -> list[SimulationResult]:
    """Average sampled-entry count, active size and their ratio per (alpha, r2).

    Replicates get independent child seeds, so results are reproducible for
    any n_jobs. Replicates whose Poisson draw is zero are skipped (the ratio
    is undefined there).
    """
    if replicates < 1:
        raise DataError("need at least one replicate")
    grid = [(float(a), int(r2)) for r2 in r2_values for a in alphas]
    children = np.random.SeedSequence(seed).spawn(len(grid) * replicates)
    results = []
    for g, (alpha, r2) in enumerate(grid):
        cfg = StpConfig(
            alpha=alpha, r1=r1, r2=r2, num_modes=num_modes,
            truncation_tol=truncation_tol, max_atoms=max_atoms,
        )
        seeds = children[g * replicates : (g + 1) * replicates]

        def one(child):
            return sample_stp_tensor(cfg, np.random.default_rng(child))

        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                draws = list(pool.map(one, seeds))
        else:
            draws = [one(child) for child in seeds]
        kept = [t for t in draws if t.total_points > 0]
        if not kept:
            continue
        entries = np.asarray([t.distinct_entries for t in kept], dtype=np.float64)
        sizes = np.asarray([t.active_size for t in kept], dtype=np.float64)
        results.append(
            SimulationResult(
                alpha=alpha,
                r2=r2,
                replicates=len(kept),
                mean_entries=float(entries.mean()),
                mean_active_size=float(sizes.mean()),
                mean_ratio=float((entries / sizes).mean()),
            )
        )
    return results


def sample_dense_baseline(
    model_kind: str,
    dims,
    r: int,
    m: int,
    rng: np.random.Generator,
    factor_scale: float = 1.0,
) -> tuple[int, int]:
    """Presence draw from a dense factorization prior.

    Factors are standard Gaussian; 'cp' scores each cell by the sum over
    factors of per-mode products, 'gp-rff' by a random-feature GP draw over
    the concatenated factors. Presence is Bernoulli(sigmoid(score)); the
    logistic link turns the real-valued score into a probability.
    """
    dims = [int(d) for d in dims]
    if any(d < 1 for d in dims) or r < 1:
        raise DataError("dims must be >= 1 and r >= 1")
    size = math.prod(dims)
    factors = [factor_scale * rng.standard_normal((d, r)) for d in dims]
    if model_kind == "cp":
        f = np.zeros(dims)
        for rr in range(r):
            cols = [u[:, rr] for u in factors]
            prod = cols[0]
            for c in cols[1:]:
                prod = np.multiply.outer(prod, c)
            f = f + prod
        scores = f.reshape(-1)
    elif model_kind == "gp-rff":
        if m < 1:
            raise DataError("gp-rff needs m >= 1 frequencies")
        grid = np.indices(dims).reshape(len(dims), -1).T
        x = np.concatenate([factors[k][grid[:, k]] for k in range(len(dims))], axis=1)
        freqs = rng.standard_normal((m, x.shape[1]))
        g = rng.standard_normal(2 * m) / math.sqrt(m)
        angles = x @ freqs.T
        scores = np.cos(angles) @ g[0::2] + np.sin(angles) @ g[1::2]
    else:
        raise DataError(f"unknown baseline kind {model_kind!r}")
    present = int(np.sum(rng.random(size) < expit(scores)))
    return present, size


def run_dense_simulation(
    kinds,
    dim_sizes,
    num_modes: int,
    r: int,
    m: int,
    replicates: int,
    seed: int = 0,
) -> list[dict]:
    """Mean present fraction per (kind, per-mode size) across replicates."""
    rows = []
    children = np.random.SeedSequence(seed).spawn(len(list(kinds)) * len(list(dim_sizes)))
    i = 0
    for kind in kinds:
        for d in dim_sizes:
            rng = np.random.default_rng(children[i])
            i += 1
            fracs = []
            for _ in range(replicates):
                present, size = sample_dense_baseline(kind, [d] * num_modes, r, m, rng)
                fracs.append(present / size)
            rows.append(
                {
                    "kind": kind,
                    "dim_per_mode": int(d),
                    "size": int(d**num_modes),
                    "replicates": replicates,
                    "mean_fraction": float(np.mean(fracs)),
                }
            )
    return rows
