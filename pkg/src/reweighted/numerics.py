"""Dense linear-algebra kernels and seeded random generators.

All generators draw from numpy's ``PCG64`` bit generator seeded through
``numpy.random.SeedSequence``, so every matrix and vector is a pure function
of its dimensions and seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "SvdConvergenceError",
    "SvdFactorization",
    "as_matrix",
    "svd",
    "least_squares_solve",
    "make_rng",
    "gaussian_sensing_matrix",
    "random_sparse_vector",
    "numerical_rank",
]


class SvdConvergenceError(ArithmeticError):
    """Raised when the singular value iteration fails to converge."""


@dataclass(frozen=True)
class SvdFactorization:
    """Thin SVD ``A = left @ diag(singular_values) @ right.T``."""

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.singular_values))

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right.T


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def svd(a) -> SvdFactorization:
    """Thin singular value decomposition with ``r = min(n1, n2)`` factors.

    Singular values come back non-increasing; ties keep LAPACK's ordering.
    """
    a = as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(str(exc)) from exc
    return SvdFactorization(u, s, vt.T)


def least_squares_solve(a, b) -> np.ndarray:
    """Minimum-norm minimizer of ``||a @ z - b||_2``."""
    a = as_matrix(a)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (a.shape[0],):
        raise ValueError(f"rhs length {b.shape} does not match {a.shape[0]} rows")
    z, *_ = np.linalg.lstsq(a, b, rcond=None)
    return z


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """PCG64 generator for ``seed`` (an int or a tuple of ints)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def gaussian_sensing_matrix(m: int, N: int, seed: int | Sequence[int]) -> np.ndarray:
    """``m x N`` matrix with i.i.d. ``N(0, 1/m)`` entries."""
    if m < 1 or N < 1:
        raise ValueError("m and N must be positive")
    return make_rng(seed).standard_normal((m, N)) / np.sqrt(m)


def random_sparse_vector(N: int, s: int, seed: int | Sequence[int]) -> np.ndarray:
    """Vector of length ``N`` with ``s`` standard Gaussian entries on a uniform support."""
    if not 0 <= s <= N:
        raise ValueError(f"sparsity {s} outside [0, {N}]")
    rng = make_rng(seed)
    x = np.zeros(N)
    support = rng.choice(N, size=s, replace=False)
    values = rng.standard_normal(s)
    # a Gaussian draw of exactly 0.0 would shrink the support
    values[values == 0.0] = 1.0
    x[support] = values
    return x


def numerical_rank(sigma, rel_tol: float = 1e-8) -> int:
    """Number of singular values strictly above ``rel_tol * sigma[0]``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0 or sigma[0] <= 0:
        return 0
    return int(np.count_nonzero(sigma > rel_tol * sigma[0]))
