"""Matrix completion by (weighted) spectral soft-thresholding.

``S_lambda^w(B)`` shrinks the j-th singular value of ``B`` by ``lambda / w_j``
(``1/0 = inf``).  The completion estimators are fixed points of

    A = S(P_Omega^perp(A) + P_Omega(A0)) / (1 + tau)

computed by plain iteration (WSST) or by accelerated proximal gradient with
continuation for the unweighted nuclear-norm problem (NNM).

Matrices with both sides at least ``FACTORED_MIN_DIM`` are handled in
factored form: iterates are kept as ``U diag(s) V^T`` and the observed part
as a sparse correction, and only the leading ``rank_cap`` singular triplets
are computed (randomized subspace iteration).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .numerics import as_matrix, numerical_rank

logger = logging.getLogger(__name__)

__all__ = [
    "DimensionMismatch",
    "WeightsNotMonotone",
    "MaxItersExceeded",
    "DegenerateWeights",
    "MaskSet",
    "MaskedMatrix",
    "WsstConfig",
    "CompletionResult",
    "FixedPointResult",
    "apply_mask",
    "weighted_nuclear_norm",
    "soft_threshold_weighted",
    "fixed_point_solve",
    "nnm_solve",
    "wsst",
    "spectral_weights",
]

FACTORED_MIN_DIM = 512
RANK_TOL = 1e-8


class DimensionMismatch(ValueError):
    pass


class WeightsNotMonotone(ValueError):
    pass


class MaxItersExceeded(RuntimeWarning):
    pass


class DegenerateWeights(RuntimeWarning):
    pass


# --------------------------------------------------------------------------
# observation model


class MaskSet:
    """Set of observed cells ``(row, col)`` of an ``n_rows x n_cols`` matrix."""

    __slots__ = ("n_rows", "n_cols", "rows", "cols")

    def __init__(self, n_rows: int, n_cols: int, rows, cols):
        if n_rows < 1 or n_cols < 1:
            raise ValueError("mask dimensions must be positive")
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        if rows.shape != cols.shape:
            raise ValueError("rows and cols must have the same length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
            raise ValueError("mask cell out of range")
        flat = rows * n_cols + cols
        if np.unique(flat).size != flat.size:
            raise ValueError("mask cells must be unique")
        self.n_rows, self.n_cols = int(n_rows), int(n_cols)
        self.rows, self.cols = rows, cols

    @classmethod
    def from_cells(cls, n_rows: int, n_cols: int, cells) -> "MaskSet":
        cells = np.asarray(list(cells), dtype=np.int64).reshape(-1, 2)
        return cls(n_rows, n_cols, cells[:, 0], cells[:, 1])

    @classmethod
    def from_bool(cls, mask) -> "MaskSet":
        mask = np.asarray(mask, dtype=bool)
        rows, cols = np.nonzero(mask)
        return cls(mask.shape[0], mask.shape[1], rows, cols)

    @classmethod
    def full(cls, n_rows: int, n_cols: int) -> "MaskSet":
        return cls.from_bool(np.ones((n_rows, n_cols), dtype=bool))

    @classmethod
    def uniform(cls, n_rows: int, n_cols: int, count: int, rng: np.random.Generator) -> "MaskSet":
        """``count`` cells drawn uniformly without replacement."""
        flat = np.sort(rng.choice(n_rows * n_cols, size=count, replace=False))
        return cls(n_rows, n_cols, flat // n_cols, flat % n_cols)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def size(self) -> int:
        return int(self.rows.size)

    @property
    def cells(self) -> list[tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def to_bool(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        out[self.rows, self.cols] = True
        return out


@dataclass
class MaskedMatrix:
    """Observed entries ``P_Omega(A0)``; unobserved entries are never stored."""

    mask: MaskSet
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != self.mask.size:
            raise ValueError("values must align with mask cells")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observed values must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def dense(self) -> np.ndarray:
        """Zero-filled embedding ``P_Omega(A0)``."""
        out = np.zeros(self.shape)
        out[self.mask.rows, self.mask.cols] = self.values
        return out

    def sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, (self.mask.rows, self.mask.cols)), shape=self.shape)

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.values))


def apply_mask(A, mask: MaskSet) -> MaskedMatrix:
    A = as_matrix(A)
    if A.shape != mask.shape:
        raise DimensionMismatch(f"matrix {A.shape} does not match mask {mask.shape}")
    return MaskedMatrix(mask, A[mask.rows, mask.cols])


# --------------------------------------------------------------------------
# config and results


@dataclass(frozen=True)
class WsstConfig:
    eps_lambda: float = 1e-4
    q: float = 0.7
    K: int = 50
    tol: float = 5e-4
    tau: float = 0.0
    max_inner_iters: int = 5_000
    rank_cap: int | None = None

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError("q must lie in (0, 1)")
        if self.tol <= 0 or self.eps_lambda <= 0:
            raise ValueError("tol and eps_lambda must be positive")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.K < 1 or self.max_inner_iters < 1:
            raise ValueError("K and max_inner_iters must be positive")
        if self.rank_cap is not None and self.rank_cap < 1:
            raise ValueError("rank_cap must be positive")


class CompletionResult:
    """Completed matrix with its spectrum and solver counters.

    Large solutions are kept in factored form ``U diag(s) V^T``; ``matrix``
    assembles the dense array on first access.
    """

    def __init__(
        self,
        matrix=None,
        rank: int = 0,
        lambda_used: float = 0.0,
        inner_iterations_total: int = 0,
        reweight_rounds: int = 0,
        final_singular_values=None,
        converged: bool = True,
        degenerate: bool = False,
        factors=None,
    ):
        if matrix is None and factors is None:
            raise ValueError("need a dense matrix or factors")
        self._dense = None if matrix is None else np.asarray(matrix, dtype=np.float64)
        self.factors = factors
        self.rank = int(rank)
        self.lambda_used = float(lambda_used)
        self.inner_iterations_total = int(inner_iterations_total)
        self.reweight_rounds = int(reweight_rounds)
        self.final_singular_values = np.asarray(
            final_singular_values if final_singular_values is not None else [], dtype=np.float64
        )
        self.converged = bool(converged)
        self.degenerate = bool(degenerate)

    @property
    def matrix(self) -> np.ndarray:
        if self._dense is None:
            U, s, V = self.factors
            self._dense = (U * s) @ V.T
        return self._dense

    @property
    def shape(self) -> tuple[int, int]:
        if self._dense is not None:
            return self._dense.shape
        return self.factors[0].shape[0], self.factors[2].shape[0]

    def values_at(self, rows, cols) -> np.ndarray:
        """Entries at the given cells without forming the dense matrix."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if self._dense is not None:
            return self._dense[rows, cols]
        U, s, V = self.factors
        return np.einsum("ij,j,ij->i", U[rows], s, V[cols])

    def __repr__(self) -> str:
        return (
            f"CompletionResult(shape={self.shape}, rank={self.rank}, lambda_used={self.lambda_used:.3g}, "
            f"inner_iterations_total={self.inner_iterations_total}, reweight_rounds={self.reweight_rounds})"
        )


class FixedPointResult(NamedTuple):
    matrix: np.ndarray
    iterations: int
    converged: bool


# --------------------------------------------------------------------------
# weighted nuclear norm and thresholding


def _weights(w, r: int) -> np.ndarray:
    w = np.asarray(getattr(w, "w", w), dtype=np.float64).reshape(-1)
    if w.size < r:
        raise ValueError(f"need at least {r} weights, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    return w[:r]


def _check_monotone(w: np.ndarray):
    if np.any(np.diff(w) > 0):
        raise WeightsNotMonotone("weights must be non-increasing")


def _thresholds(lam: float, w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(w > 0, lam / np.where(w > 0, w, 1.0), np.inf)


def weighted_nuclear_norm(A, w) -> float:
    """``sum_j sigma_j(A) / w_j`` with ``1/0 = inf`` and ``0/0 = 0``."""
    A = as_matrix(A)
    s = np.linalg.svd(A, compute_uv=False)
    w = _weights(w, s.size)
    pos = s > 0
    if np.any(w[pos] == 0):
        return np.inf
    return float(np.sum(s[pos] / w[pos]))


def _shrink_dense(B: np.ndarray, thresholds: np.ndarray, rank_cap=None):
    u, s, vt = np.linalg.svd(B, full_matrices=False)
    sh = np.maximum(s - thresholds[: s.size], 0.0)
    if rank_cap is not None:
        sh[rank_cap:] = 0.0
    r = int(np.count_nonzero(sh))
    return u[:, :r], sh, vt[:r].T


def soft_threshold_weighted(B, lam: float, w, tau: float = 0.0) -> np.ndarray:
    """``S_lambda^w(B) / (1 + tau)`` for non-increasing weights ``w``."""
    B = as_matrix(B)
    if lam < 0 or tau < 0:
        raise ValueError("lambda and tau must be non-negative")
    w = _weights(w, min(B.shape))
    _check_monotone(w)
    u, sh, v = _shrink_dense(B, _thresholds(lam, w))
    return (u * (sh[: u.shape[1]] / (1.0 + tau))) @ v.T


def spectral_weights(sigma, rel_tol: float = RANK_TOL) -> np.ndarray:
    """Weights ``sigma_j`` up to the numerical rank, zero beyond."""
    sigma = np.asarray(sigma, dtype=np.float64)
    w = np.zeros_like(sigma)
    r = numerical_rank(sigma, rel_tol)
    w[:r] = sigma[:r]
    return w


# --------------------------------------------------------------------------
# iterate representations


class _Dense:
    """Iterates as dense arrays."""

    def __init__(self, obs: MaskedMatrix, rank_cap=None):
        self.obs = obs
        self.rows, self.cols = obs.mask.rows, obs.mask.cols
        self.rank_cap = rank_cap
        self.n = min(obs.shape)

    def zero(self):
        return np.zeros(self.obs.shape)

    def from_dense(self, A):
        return np.array(A, dtype=np.float64)

    def to_dense(self, X):
        return X

    def extrapolate(self, X, Xp, beta):
        return X + beta * (X - Xp)

    def shrink(self, X, thresholds, scale=1.0):
        B = X.copy()
        B[self.rows, self.cols] = self.obs.values
        u, sh, v = _shrink_dense(B, thresholds, self.rank_cap)
        return (u * (sh[: u.shape[1]] * scale)) @ v.T, sh * scale

    def norm(self, X):
        return float(np.linalg.norm(X))

    def dist(self, X, Y):
        return float(np.linalg.norm(X - Y))

    def top_singular_value(self):
        return float(np.linalg.norm(self.obs.dense(), 2))

    def singular_values(self, X):
        return np.linalg.svd(X, compute_uv=False)

    def inner(self, X, Y):
        return float(np.vdot(X, Y))


class _LowRank(NamedTuple):
    U: np.ndarray
    s: np.ndarray
    V: np.ndarray


class _Factored:
    """Iterates as ``U diag(s) V^T``; the observed part is a sparse correction."""

    def __init__(self, obs: MaskedMatrix, rank_cap: int, oversample: int = 10, power_iters: int = 3):
        self.obs = obs
        self.rows, self.cols = obs.mask.rows, obs.mask.cols
        self.rank_cap = rank_cap
        self.oversample = oversample
        self.power_iters = power_iters
        self.n = min(obs.shape)
        self.rng = np.random.default_rng(0)
        self._basis = None

    def zero(self):
        n1, n2 = self.obs.shape
        return _LowRank(np.zeros((n1, 0)), np.zeros(0), np.zeros((n2, 0)))

    def from_dense(self, A):
        u, s, vt = np.linalg.svd(np.asarray(A, dtype=np.float64), full_matrices=False)
        r = numerical_rank(s, 1e-15)
        return _LowRank(u[:, :r], s[:r], vt[:r].T)

    def to_dense(self, X):
        return (X.U * X.s) @ X.V.T

    def extrapolate(self, X, Xp, beta):
        return _LowRank(
            np.hstack([X.U, Xp.U]),
            np.concatenate([(1.0 + beta) * X.s, -beta * Xp.s]),
            np.hstack([X.V, Xp.V]),
        )

    def _values_at(self, X):
        return np.einsum("ij,j,ij->i", X.U[self.rows], X.s, X.V[self.cols])

    def shrink(self, X, thresholds, scale=1.0):
        n1, n2 = self.obs.shape
        corr = sp.csr_matrix((self.obs.values - self._values_at(X), (self.rows, self.cols)), shape=(n1, n2))
        corr_t = corr.T.tocsr()

        def matmat(Z):
            return X.U @ (X.s[:, None] * (X.V.T @ Z)) + corr @ Z

        def rmatmat(Z):
            return X.V @ (X.s[:, None] * (X.U.T @ Z)) + corr_t @ Z

        k = min(self.rank_cap, self.n, int(np.count_nonzero(np.isfinite(thresholds))) or 1)
        ell = min(k + self.oversample, self.n)
        if self._basis is not None and self._basis.shape[1] >= ell:
            Q = self._basis[:, :ell]
        else:
            Q = self.rng.standard_normal((n2, ell))
            Q, _ = np.linalg.qr(matmat(Q))
        for _ in range(self.power_iters):
            Z, _ = np.linalg.qr(rmatmat(Q))
            Q, _ = np.linalg.qr(matmat(Z))
        small = rmatmat(Q).T
        ub, s, vt = np.linalg.svd(small, full_matrices=False)
        self._basis = Q @ ub
        s = s[:k]
        sh = np.maximum(s - thresholds[:k], 0.0) * scale
        r = int(np.count_nonzero(sh))
        full = np.zeros(self.n)
        full[:k] = sh
        return _LowRank(self._basis[:, :r], sh[:r], vt[:r].T), full

    def inner(self, X, Y):
        return float(X.s @ ((X.U.T @ Y.U) * (X.V.T @ Y.V)) @ Y.s)

    def norm(self, X):
        return float(np.sqrt(max(self.inner(X, X), 0.0)))

    def dist(self, X, Y):
        d2 = self.inner(X, X) + self.inner(Y, Y) - 2.0 * self.inner(X, Y)
        return float(np.sqrt(max(d2, 0.0)))

    def top_singular_value(self):
        from scipy.sparse.linalg import svds

        A = self.obs.sparse()
        if A.nnz == 0:
            return 0.0
        return float(svds(A, k=1, return_singular_vectors=False, random_state=0)[0])

    def singular_values(self, X):
        # X comes out of a thresholding step: orthonormal factors
        s = np.sort(np.abs(X.s))[::-1]
        out = np.zeros(self.n)
        out[: s.size] = s
        return out


def _backend(obs: MaskedMatrix, rank_cap=None):
    if min(obs.shape) >= FACTORED_MIN_DIM:
        return _Factored(obs, rank_cap or 100)
    return _Dense(obs, rank_cap)


def _relative_change(be, new, old, floor: float) -> float:
    diff = be.dist(new, old)
    if diff == 0:
        return 0.0
    return diff / max(be.norm(old), floor)


# --------------------------------------------------------------------------
# solvers


def _fixed_point(be, X, thresholds, tau, tol, max_iters, floor):
    """Plain iteration ``X <- S(P_perp X + P_Omega A0) / (1 + tau)``."""
    scale = 1.0 / (1.0 + tau)
    sigma = None
    for it in range(1, max_iters + 1):
        Xn, sigma = be.shrink(X, thresholds, scale)
        delta = _relative_change(be, Xn, X, floor)
        X = Xn
        if delta <= tol:
            return X, sigma, it, True
    return X, sigma, max_iters, False


def fixed_point_solve(
    obs: MaskedMatrix,
    lam: float,
    w,
    tau: float = 0.0,
    tol: float = 1e-8,
    warm_start=None,
    max_iters: int = 10_000,
) -> FixedPointResult:
    """Iterate ``A <- S_lambda^w(P_perp(A) + P_Omega(A0)) / (1 + tau)`` from ``warm_start``.

    Stops when the relative Frobenius change is at most ``tol``.  The zero
    matrix is the default start.
    """
    if lam < 0 or tau < 0:
        raise ValueError("lambda and tau must be non-negative")
    w = _weights(w, min(obs.shape))
    _check_monotone(w)
    be = _Dense(obs)
    X = be.zero() if warm_start is None else be.from_dense(as_matrix(warm_start))
    if X.shape != obs.shape:
        raise DimensionMismatch("warm start has the wrong shape")
    floor = 1e-12 * max(obs.frobenius(), np.finfo(np.float64).tiny)
    X, _, iters, ok = _fixed_point(be, X, _thresholds(lam, w), tau, tol, max_iters, floor)
    if not ok:
        warnings.warn(f"fixed point not reached in {max_iters} iterations", MaxItersExceeded, stacklevel=2)
    return FixedPointResult(X, iters, ok)


def _lambda_schedule(lam1: float, lam_target: float, q: float):
    """``lam1, lam1 q, ...`` while above ``lam_target``."""
    lam = lam1
    while lam > lam_target:
        yield lam
        lam *= q


def _result(be, X, sigma, lam, iters, rounds, converged, degenerate=False):
    sigma = np.asarray(sigma if sigma is not None else np.zeros(be.n))
    sigma = np.sort(sigma)[::-1]
    dense, factors = (None, tuple(X)) if isinstance(X, _LowRank) else (be.to_dense(X), None)
    return CompletionResult(
        matrix=dense,
        rank=numerical_rank(sigma, RANK_TOL),
        lambda_used=lam,
        inner_iterations_total=iters,
        reweight_rounds=rounds,
        final_singular_values=sigma,
        converged=converged,
        degenerate=degenerate,
        factors=factors,
    )


def nnm_solve(obs: MaskedMatrix, cfg: WsstConfig | None = None) -> CompletionResult:
    """Nuclear-norm penalized least squares by accelerated proximal gradient.

    Minimizes ``0.5 |P_Omega(A) - P_Omega(A0)|_F^2 + lambda_target |A|_*`` with
    ``lambda_target = eps_lambda * |P_Omega(A0)|_op``, reached by continuation
    (factor ``q``) with warm starts.  Step size is 1 (the masking operator has
    Lipschitz constant 1); momentum restarts when the proximal step and the
    momentum direction disagree.
    """
    cfg = cfg or WsstConfig()
    be = _backend(obs, cfg.rank_cap)
    lam1 = be.top_singular_value()
    lam_target = cfg.eps_lambda * lam1
    floor = 1e-12 * max(obs.frobenius(), np.finfo(np.float64).tiny)
    X = be.zero()
    sigma = None
    total = 0
    converged = True
    if lam1 == 0:
        return _result(be, X, sigma, 0.0, 0, 0, True)
    stages = list(_lambda_schedule(lam1, lam_target, cfg.q)) + [lam_target]
    for lam in stages:
        thresholds = np.full(be.n, lam)
        X_prev = X
        t = 1.0
        ok = False
        for _ in range(cfg.max_inner_iters):
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            Y = be.extrapolate(X, X_prev, beta) if beta > 0 else X
            Xn, sigma = be.shrink(Y, thresholds)
            total += 1
            delta = _relative_change(be, Xn, X, floor)
            # gradient-based restart: proximal step opposes the momentum
            if beta > 0 and be.inner(be.extrapolate(Y, Xn, -1.0), be.extrapolate(Xn, X, -1.0)) > 0:
                t_next = 1.0
            X_prev, X, t = X, Xn, t_next
            if delta <= cfg.tol:
                ok = True
                break
        converged = ok
    if not converged:
        warnings.warn("NNM final stage hit max_inner_iters", MaxItersExceeded, stacklevel=2)
    return _result(be, X, sigma, lam_target, total, 0, converged)


def wsst(obs: MaskedMatrix, preliminary: CompletionResult | np.ndarray, cfg: WsstConfig | None = None) -> CompletionResult:
    """Iteratively weighted spectral soft-thresholding.

    Weights start at the singular values of ``preliminary`` (usually the NNM
    solution).  A continuation loop runs the fixed point at
    ``lambda_1 = |P_Omega(A0)|_op`` and then ``lambda_1 q^i`` while above
    ``lambda_target``; then ``K`` rounds at ``lambda_target`` each refresh the
    weights from the current iterate and re-solve the fixed point with a warm
    start.  The threshold of component j is ``lambda * w_1 / w_j``.
    """
    cfg = cfg or WsstConfig()
    be = _backend(obs, cfg.rank_cap)
    if isinstance(preliminary, CompletionResult):
        shape, sigma0 = preliminary.shape, preliminary.final_singular_values
    else:
        prelim = as_matrix(preliminary)
        shape, sigma0 = prelim.shape, np.linalg.svd(prelim, compute_uv=False)
    if shape != obs.shape:
        raise DimensionMismatch("preliminary reconstruction has the wrong shape")
    padded = np.zeros(be.n)
    k = min(be.n, len(sigma0))
    padded[:k] = np.sort(np.asarray(sigma0, dtype=np.float64))[::-1][:k]
    sigma0 = padded
    lam1 = be.top_singular_value()
    lam_target = cfg.eps_lambda * lam1
    floor = 1e-12 * max(obs.frobenius(), np.finfo(np.float64).tiny)
    X = be.zero()

    w = spectral_weights(sigma0)
    if not np.any(w):
        warnings.warn("preliminary reconstruction is zero", DegenerateWeights, stacklevel=2)
        return _result(be, X, None, lam_target, 0, 0, True, degenerate=True)

    total = 0
    sigma = None
    ok = True
    for lam in _lambda_schedule(lam1, lam_target, cfg.q):
        X, sigma, iters, ok = _fixed_point(be, X, _thresholds(lam * w[0], w), cfg.tau, cfg.tol, cfg.max_inner_iters, floor)
        total += iters

    rounds = 0
    for _ in range(cfg.K):
        # the last shrink already returned the spectrum of X
        w = spectral_weights(sigma if sigma is not None else be.singular_values(X))
        if not np.any(w):
            warnings.warn("all singular values vanished during reweighting", DegenerateWeights, stacklevel=2)
            return _result(be, be.zero(), None, lam_target, total, rounds, ok, degenerate=True)
        X, sigma, iters, ok = _fixed_point(
            be, X, _thresholds(lam_target * w[0], w), cfg.tau, cfg.tol, cfg.max_inner_iters, floor
        )
        total += iters
        rounds += 1
    if not ok:
        warnings.warn("WSST final round hit max_inner_iters", MaxItersExceeded, stacklevel=2)
    return _result(be, X, sigma, lam_target, total, rounds, ok)
