"""Sparse tensor factorization with hierarchical Gamma-process priors and a
random-Fourier-feature GP value model."""

__version__ = "0.1.0"

from .data import SparseTensorData, SplitSpec, load_tensor, save_tensor, split_train_test

__all__ = [
    "SparseTensorData",
    "SplitSpec",
    "load_tensor",
    "save_tensor",
    "split_train_test",
    "__version__",
]
