"""Sparse tensor data in coordinate form: file I/O, splitting, reindexing,
negative sampling.

Entry files are UTF-8 text. An optional first line ``K;D_1,...,D_K`` declares
the mode count and per-mode sizes; every following line is
``i_1,...,i_K,value`` with 0-based integer indices. Lines starting with ``#``
are comments. Index-only files (link lists) omit the value column. Without a
header, dims are inferred as 1 + max index per mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DataError, ParseError


@dataclass(frozen=True)
class SparseTensorData:
    """Observed tensor entries in coordinate form.

    indices is an (N, K) int array, values an (N,) float array. Repeated
    indices are legal and kept as separate observations. Instances are
    immutable after construction and safe to share across threads.
    """

    num_modes: int
    dims: tuple[int, ...]
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(np.asarray(self.indices, dtype=np.int64))
        val = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if self.num_modes < 2:
            raise DataError(f"need at least 2 modes, got {self.num_modes}")
        if len(self.dims) != self.num_modes:
            raise DataError("dims length does not match num_modes")
        if any(d < 1 for d in self.dims):
            raise DataError("all dims must be positive")
        if idx.ndim != 2 or idx.shape[1] != self.num_modes:
            raise DataError("indices must be an (N, K) array")
        if val.shape != (idx.shape[0],):
            raise DataError("values must align with indices")
        if idx.size and (idx.min() < 0 or (idx >= np.asarray(self.dims)).any()):
            raise DataError("index out of declared bounds")
        if val.size and not np.isfinite(val).all():
            raise DataError("entry values must be finite")
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def distinct_indices(self) -> np.ndarray:
        """Distinct index rows, in first-appearance order."""
        _, first = np.unique(self.indices, axis=0, return_index=True)
        return self.indices[np.sort(first)]

    def density(self) -> float:
        """Fraction of the declared index space holding at least one entry."""
        total = math.prod(self.dims)
        return len(self.distinct_indices()) / total


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic train/test split request: same (data, spec) -> same split."""

    train_fraction: float
    seed: int = 0


def _parse_header(line: str, path, lineno: int) -> tuple[int, tuple[int, ...]]:
    head, _, tail = line.partition(";")
    try:
        k = int(head.strip())
        dims = tuple(int(tok) for tok in tail.split(","))
    except ValueError as exc:
        raise ParseError(path, lineno, f"bad header: {exc}") from None
    if k < 2 or len(dims) != k:
        raise ParseError(path, lineno, f"header declares {k} modes but {len(dims)} dims")
    return k, dims


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def load_tensor(path) -> SparseTensorData:
    """Load an entry file with values (last column) into SparseTensorData."""
    header: tuple[int, tuple[int, ...]] | None = None
    rows: list[list[int]] = []
    vals: list[float] = []
    k = None
    for lineno, line in _data_lines(path):
        if header is None and not rows and ";" in line:
            header = _parse_header(line, path, lineno)
            k = header[0]
            continue
        toks = line.split(",")
        if k is None:
            if len(toks) < 3:
                raise ParseError(path, lineno, f"expected >=2 indices and a value, got {len(toks)} fields")
            k = len(toks) - 1
        if len(toks) != k + 1:
            raise ParseError(path, lineno, f"expected {k + 1} fields, got {len(toks)}")
        try:
            idx = [int(t) for t in toks[:-1]]
            val = float(toks[-1])
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        if any(i < 0 for i in idx):
            raise ParseError(path, lineno, "negative index")
        if header is not None and any(i >= d for i, d in zip(idx, header[1])):
            raise DataError(f"{path}:{lineno}: index {tuple(idx)} exceeds declared dims {header[1]}")
        rows.append(idx)
        vals.append(val)
    if k is None:
        raise DataError(f"{path}: no entries")
    idx_arr = np.asarray(rows, dtype=np.int64).reshape(len(rows), k)
    if header is not None:
        num_modes, dims = header
    else:
        num_modes, dims = k, tuple(int(m) + 1 for m in idx_arr.max(axis=0))
    return SparseTensorData(num_modes, dims, idx_arr, np.asarray(vals))


def load_indices(path, num_modes: int | None = None) -> np.ndarray:
    """Load an index-only file (no value column) into an (N, K) int array."""
    header = None
    rows: list[list[int]] = []
    k = num_modes
    for lineno, line in _data_lines(path):
        if header is None and not rows and ";" in line:
            header = _parse_header(line, path, lineno)
            if k is not None and header[0] != k:
                raise DataError(f"{path}: header declares {header[0]} modes, expected {k}")
            k = header[0]
            continue
        toks = line.split(",")
        if k is None:
            k = len(toks)
        if len(toks) != k:
            raise ParseError(path, lineno, f"expected {k} indices, got {len(toks)}")
        try:
            idx = [int(t) for t in toks]
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        if any(i < 0 for i in idx):
            raise ParseError(path, lineno, "negative index")
        rows.append(idx)
    if not rows:
        raise DataError(f"{path}: no entries")
    return np.asarray(rows, dtype=np.int64)


def save_tensor(data: SparseTensorData, path) -> None:
    """Write an entry file; values use 17 significant digits so a reload
    round-trips float64 exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{data.num_modes};{','.join(str(d) for d in data.dims)}\n")
        for row, val in zip(data.indices, data.values):
            fh.write(",".join(str(int(i)) for i in row) + f",{val:.17g}\n")


def split_train_test(data: SparseTensorData, spec: SplitSpec) -> tuple[SparseTensorData, SparseTensorData]:
    """Disjoint partition of entry positions; |train| = round(fraction * N)."""
    if not 0.0 < spec.train_fraction < 1.0:
        raise DataError("train_fraction must lie in (0, 1)")
    n = len(data)
    if n < 2:
        raise DataError("need at least 2 entries to split")
    n_train = int(math.floor(spec.train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(spec.seed).permutation(n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    make = lambda pos: SparseTensorData(data.num_modes, data.dims, data.indices[pos], data.values[pos])
    return make(tr), make(te)


def reindex_active_nodes(entries: np.ndarray) -> tuple[list[dict[int, int]], list[int]]:
    """Map each mode's distinct node ids to 0..D_k-1 in first-appearance order.

    Returns (per-mode old->new maps, active dim counts).
    """
    entries = np.asarray(entries, dtype=np.int64)
    if entries.ndim != 2 or entries.shape[0] == 0:
        raise DataError("need a non-empty (N, K) entry array")
    mode_maps: list[dict[int, int]] = []
    active_dims: list[int] = []
    for k in range(entries.shape[1]):
        mapping: dict[int, int] = {}
        for node in entries[:, k]:
            node = int(node)
            if node not in mapping:
                mapping[node] = len(mapping)
        mode_maps.append(mapping)
        active_dims.append(len(mapping))
    return mode_maps, active_dims


def apply_mode_maps(entries: np.ndarray, mode_maps: list[dict[int, int]]) -> np.ndarray:
    """Rewrite raw node ids through per-mode maps; raises on unseen nodes."""
    entries = np.asarray(entries, dtype=np.int64)
    out = np.empty_like(entries)
    for k, mapping in enumerate(mode_maps):
        col = entries[:, k]
        if col.size == 0:
            continue
        if col.min() < 0:
            raise DataError(f"negative node id in mode {k}")
        table = np.full(max(int(col.max()), max(mapping)) + 1, -1, dtype=np.int64)
        for old, new in mapping.items():
            table[old] = new
        mapped = table[col]
        if (mapped < 0).any():
            bad = int(col[mapped < 0][0])
            raise DataError(f"node {bad} in mode {k} was not seen during training")
        out[:, k] = mapped
    return out


def sample_negatives(
    data: SparseTensorData,
    ratio: int,
    seed: int,
    exclude: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ratio * (distinct observed) index tuples uniformly from the
    index space, excluding observed indices (and optional extra rows),
    without duplicates.

    Rejection-samples against a hash set; falls back to enumerating the
    complement when the space is small or nearly saturated. Raises
    CapacityError rather than under-sample.
    """
    if ratio < 1:
        raise DataError("ratio must be a positive integer")
    dims = np.asarray(data.dims, dtype=np.int64)
    total = math.prod(data.dims)
    observed = {tuple(int(v) for v in row) for row in data.indices}
    n_distinct = len(observed)
    if exclude is not None:
        observed |= {tuple(int(v) for v in row) for row in np.asarray(exclude, dtype=np.int64)}
    want = ratio * n_distinct
    available = total - len(observed)
    if want > available:
        raise CapacityError(
            f"requested {want} negatives but only {available} nonexistent indices exist"
        )
    rng = np.random.default_rng(seed)
    if total <= 2_000_000 and want * 4 > available:
        # dense or nearly saturated space: enumerate the complement
        grid = np.indices(data.dims).reshape(len(data.dims), -1).T
        mask = np.fromiter(
            (tuple(int(v) for v in row) not in observed for row in grid),
            dtype=bool,
            count=total,
        )
        pool = grid[mask]
        pick = rng.choice(len(pool), size=want, replace=False)
        return pool[np.sort(pick)]
    chosen: set[tuple[int, ...]] = set()
    out = np.empty((want, data.num_modes), dtype=np.int64)
    filled = 0
    while filled < want:
        batch = rng.integers(0, dims, size=(max(64, 2 * (want - filled)), data.num_modes))
        for row in batch:
            key = tuple(int(v) for v in row)
            if key in observed or key in chosen:
                continue
            chosen.add(key)
            out[filled] = row
            filled += 1
            if filled == want:
                break
    return out
