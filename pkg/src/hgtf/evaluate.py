"""Metrics and experiment protocols: completion error, link prediction AUC,
the factor-count validation sweep, and 2-D PCA factor projection."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rff
from .data import SparseTensorData, SplitSpec, apply_mode_maps, split_train_test
from .errors import DataError, DomainError
from .priors import batch_entry_log_prob
from .train import TrainConfig, TrainedModel, entry_inputs, collect_arrays, train


@dataclass
class EvalReport:
    mse: float
    mae: float
    auc: float
    sweep: list[tuple[int, int, float, float]] = field(default_factory=list)


def mse_mae(predictions, truth) -> tuple[float, float]:
    """Mean squared and mean absolute residuals."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predictions.shape != truth.shape or predictions.size == 0:
        raise DataError("predictions and truth must be equal-length and non-empty")
    resid = predictions - truth
    return float(np.mean(resid**2)), float(np.mean(np.abs(resid)))


def auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 P(tie), via average ranks."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise DataError("both score lists must be non-empty")
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty_like(combined)
    ranks[order] = np.arange(1, combined.size + 1, dtype=np.float64)
    # average ranks within tied groups
    sorted_vals = combined[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[: pos.size].sum()
    u = rank_sum - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def _map_with_aggregated(model: TrainedModel, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map raw node ids to active slots; unseen nodes go to the aggregated
    slot of their mode. Returns (mapped indices, per-row unseen flags)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 2 or indices.shape[1] != len(model.mode_maps):
        raise DataError("indices must be an (N, K) array matching the model's modes")
    out = np.empty_like(indices)
    flags = np.zeros(indices.shape[0], dtype=bool)
    for k, mapping in enumerate(model.mode_maps):
        agg = model.active_dims[k]  # last slot
        col = indices[:, k]
        if col.size and col.min() < 0:
            raise DataError(f"negative node id in mode {k}")
        table = np.full(max(int(col.max(initial=0)), max(mapping)) + 1, agg, dtype=np.int64)
        for old, new in mapping.items():
            table[old] = new
        mapped = table[col]
        flags |= mapped == agg
        out[:, k] = mapped
    return out, flags


def link_scores(model: TrainedModel, indices, return_flags: bool = False):
    """Entry-presence scores exp(log w) in (0, 1) for raw index tuples.

    Indices with nodes unseen at training time score through the aggregated
    inactive slot and are flagged instead of crashing.
    """
    mapped, flags = _map_with_aggregated(model, np.asarray(indices, dtype=np.int64))
    omega_tildes = [mp.omega_tilde for mp in model.mode_params]
    scores = np.exp(batch_entry_log_prob(mapped, omega_tildes, model.config.r2))
    if return_flags:
        return scores, flags
    return scores


def predict_values(model: TrainedModel, indices) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and variance of entry values for raw index tuples.

    Unlike link scoring there is no aggregated-slot fallback: value inputs
    need a concrete node location, so unseen nodes are an error.
    """
    mapped = apply_mode_maps(np.asarray(indices, dtype=np.int64), model.mode_maps)
    arrays = collect_arrays(model)
    x = entry_inputs(arrays, mapped, model.num_modes, model.config.alpha)
    return rff.predict_batch(x, model.rff_model)


def evaluate_completion(model: TrainedModel, test: SparseTensorData) -> tuple[float, float]:
    """Held-out MSE/MAE of predictive means."""
    means, _ = predict_values(model, test.indices)
    return mse_mae(means, test.values)


def sweep_r1_r2(
    train_data: SparseTensorData,
    r_total: int,
    cfg_template: TrainConfig,
    seed: int = 0,
    validation_fraction: float = 0.1,
):
    """Validation sweep over all (r1, r2) with r1 + r2 = r_total.

    Holds out a slice of the training data, fits each split of the factor
    budget on the rest, and returns (table, best pair); ties break toward
    more sociability factors.
    """
    if r_total < 2:
        raise DataError("r_total must be at least 2")
    fit, val = split_train_test(train_data, SplitSpec(1.0 - validation_fraction, seed=seed))
    table: list[tuple[int, int, float, float]] = []
    children = np.random.SeedSequence(seed).spawn(r_total - 1)
    for i, r1 in enumerate(range(1, r_total)):
        r2 = r_total - r1
        cfg = replace(cfg_template, r1=r1, r2=r2, seed=int(children[i].generate_state(1)[0] % 2**31))
        model = train(fit, cfg)
        keep = _rows_with_seen_nodes(model, val.indices)
        if not keep.any():
            raise DataError("validation slice shares no nodes with the fit slice")
        mse, mae = mse_mae(
            predict_values(model, val.indices[keep])[0], val.values[keep]
        )
        table.append((r1, r2, mse, mae))
    best = min(table, key=lambda row: (row[2], -row[1]))
    return table, (best[0], best[1])


def _rows_with_seen_nodes(model: TrainedModel, indices: np.ndarray) -> np.ndarray:
    _, flags = _map_with_aggregated(model, indices)
    return ~flags


def pca_project(factors: np.ndarray) -> np.ndarray:
    """Project rows onto the top-2 principal axes of the centered covariance.

    Columns are ordered by eigenvalue; each axis is signed so its first
    non-zero loading is positive.
    """
    x = np.asarray(factors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise DomainError("need an (n>=2, p>=2) factor matrix")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (x.shape[0] - 1)
    if not np.any(np.abs(centered) > 1e-15):
        raise DomainError("all rows are identical; no principal directions exist")
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:2]
    basis = eigvecs[:, order]
    for j in range(2):
        col = basis[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            basis[:, j] = -col
    return centered @ basis


def factor_matrix(model: TrainedModel, mode: int) -> np.ndarray:
    """Per-node factor bundle for one mode: box-mapped locations followed by
    normalized sociabilities (communities as columns)."""
    mp = model.mode_params[mode]
    theta = np.asarray(mp.theta(model.config.alpha))
    omega = np.asarray(mp.omega())[:, : mp.num_active].T  # (D_k, R_2)
    return np.concatenate([theta, omega], axis=1)
