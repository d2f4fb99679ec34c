"""Exact-recovery conditions for weighted basis pursuit.

Weight accuracy constant, empirical restricted isometry and incoherence
constants, the exact dual certificate built from the Gram matrix of the
support, and the null-space test for one-dimensional kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .numerics import as_matrix

__all__ = [
    "SingularGram",
    "KernelTooLarge",
    "CertificateReport",
    "a0_constant",
    "weight_accuracy_implies_a0",
    "empirical_rip_delta",
    "empirical_incoherence",
    "dual_certificate",
    "nullspace_check_1d",
]

CERT_TOL = 1e-10
GRAM_COND_MAX = 1e12


class SingularGram(np.linalg.LinAlgError):
    """``A_I^T A_I`` is numerically singular."""


class KernelTooLarge(ValueError):
    """The null-space test only handles kernels of dimension at most one."""


def _weights(w) -> np.ndarray:
    # accepts plain arrays or anything with a ``w`` attribute (cs.WeightVector)
    w = np.asarray(getattr(w, "w", w), dtype=np.float64).reshape(-1)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    return w


def _index_set(I, N: int) -> np.ndarray:
    I = np.unique(np.asarray(I, dtype=int).reshape(-1))
    if I.size and (I[0] < 0 or I[-1] >= N):
        raise IndexError(f"index set out of range [0, {N})")
    return I


def _complement(I: np.ndarray, N: int) -> np.ndarray:
    keep = np.ones(N, dtype=bool)
    keep[I] = False
    return np.flatnonzero(keep)


def a0_constant(w, I) -> float:
    """``|w_{I^c}|_inf * |(1/w)_I|_2`` with ``1/0 = inf``.

    A zero weight inside ``I`` gives ``inf`` even when ``w_{I^c} = 0``: the
    support of ``x`` must be inside the support of ``w`` for recovery.
    """
    w = _weights(w)
    I = _index_set(I, w.size)
    wI = w[I]
    if np.any(wI == 0):
        return np.inf
    Ic = _complement(I, w.size)
    off = float(np.max(w[Ic])) if Ic.size else 0.0
    if off == 0.0:
        return 0.0
    return off * float(np.linalg.norm(1.0 / wI))


def weight_accuracy_implies_a0(x, w, C: float) -> bool:
    """Sufficient condition ``min_I |x_i| >= (1 + sqrt(|I|)/C) |w - |x||_inf``."""
    if not C > 0:
        raise ValueError("C must be positive")
    x = np.asarray(x, dtype=np.float64)
    w = _weights(w)
    I = np.flatnonzero(x)
    if I.size == 0:
        raise ValueError("x must have a non-empty support")
    lhs = float(np.min(np.abs(x[I])))
    rhs = (1.0 + np.sqrt(I.size) / C) * float(np.max(np.abs(w - np.abs(x))))
    return lhs >= rhs


def empirical_rip_delta(A, I) -> float:
    """``|A_I^T A_I - Id|_{2->2}`` from the extreme singular values of ``A_I``."""
    A = as_matrix(A, "A")
    I = _index_set(I, A.shape[1])
    if I.size == 0:
        return 0.0
    s = np.linalg.svd(A[:, I], compute_uv=False)
    if I.size > s.size:
        # Gram matrix has a kernel: eigenvalue 0
        s = np.append(s, 0.0)
    return float(max(abs(s[0] ** 2 - 1.0), abs(s[-1] ** 2 - 1.0)))


def empirical_incoherence(A, I) -> float:
    """``max_{i not in I} |A_I^T A_{col i}|_2``."""
    A = as_matrix(A, "A")
    I = _index_set(I, A.shape[1])
    Ic = _complement(I, A.shape[1])
    if I.size == 0 or Ic.size == 0:
        return 0.0
    cross = A[:, I].T @ A[:, Ic]
    return float(np.max(np.linalg.norm(cross, axis=0)))


@dataclass
class CertificateReport:
    Y0: np.ndarray
    z: np.ndarray
    sign_match: bool
    strict_bound: float
    valid: bool
    borderline: bool
    delta_hat: float
    mu_hat: float
    a0_constant: float

    @property
    def incoherence_condition(self) -> bool:
        """``delta < 1`` and ``C <= (1 - delta) / mu`` for the empirical constants."""
        if self.delta_hat >= 1:
            return False
        if self.mu_hat == 0:
            return np.isfinite(self.a0_constant)
        return self.a0_constant <= (1.0 - self.delta_hat) / self.mu_hat


def dual_certificate(A, x, w) -> CertificateReport:
    """Exact dual certificate ``Y0 = A^T A_I (A_I^T A_I)^{-1} (sgn(x)/w)_I``.

    ``Y0`` is stored with its pre-image ``z`` (``Y0 = A^T z``), so it lies in
    the row space of ``A`` by construction.

    Raises
    ------
    SingularGram
        If ``A_I^T A_I`` has condition number above ``1e12``.
    """
    A = as_matrix(A, "A")
    x = np.asarray(x, dtype=np.float64)
    w = _weights(w)
    N = A.shape[1]
    if x.shape != (N,) or w.shape != (N,):
        raise ValueError("x and w must have one entry per column of A")
    I = np.flatnonzero(x)
    if I.size == 0:
        raise ValueError("x must have a non-empty support")
    if np.any(w[I] == 0):
        raise ValueError("support of x must be inside the support of w")

    AI = A[:, I]
    gram = AI.T @ AI
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= 0 or eig[-1] / eig[0] > GRAM_COND_MAX:
        raise SingularGram(f"Gram matrix of the support is singular (eigenvalues {eig[0]:.3g}..{eig[-1]:.3g})")
    rhs = np.sign(x[I]) / w[I]
    coef = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), rhs)
    z = AI @ coef
    Y0 = A.T @ z

    wY = w * Y0
    sign_match = bool(np.max(np.abs(wY[I] - np.sign(x[I]))) <= CERT_TOL)
    Ic = _complement(I, N)
    strict_bound = float(np.max(np.abs(wY[Ic]))) if Ic.size else 0.0
    borderline = abs(strict_bound - 1.0) <= CERT_TOL
    valid = sign_match and strict_bound < 1.0 and not borderline
    return CertificateReport(
        Y0=Y0,
        z=z,
        sign_match=sign_match,
        strict_bound=strict_bound,
        valid=valid,
        borderline=borderline,
        delta_hat=empirical_rip_delta(A, I),
        mu_hat=empirical_incoherence(A, I),
        a0_constant=a0_constant(w, I),
    )


def nullspace_check_1d(A, x, w, margin: float = 1e-12) -> bool:
    """Null-space condition for ``Delta_w(Ax) = x`` when ``dim ker A_{I_w} <= 1``.

    For the unit kernel direction ``h`` (restricted to ``I_w``) both ``h`` and
    ``-h`` must satisfy
    ``|(h/w)_{I_x^c}|_1 + <sgn(x_I), (h/w)_I> > margin``.

    Raises
    ------
    KernelTooLarge
        If the kernel of ``A_{I_w}`` has dimension above one.
    """
    A = as_matrix(A, "A")
    x = np.asarray(x, dtype=np.float64)
    w = _weights(w)
    Iw = np.flatnonzero(w)
    Ix = np.flatnonzero(x)
    if not np.all(np.isin(Ix, Iw)):
        return False
    if Iw.size == 0:
        return True
    Aw = A[:, Iw]
    _, s, vt = np.linalg.svd(Aw, full_matrices=True)
    tol = max(Aw.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    rank = int(np.count_nonzero(s > tol))
    dim = Iw.size - rank
    if dim == 0:
        return True
    if dim > 1:
        raise KernelTooLarge(f"kernel of A restricted to the weight support has dimension {dim}")
    h = vt[-1]
    ratio = h / w[Iw]
    on = np.isin(Iw, Ix)
    sgn = np.sign(x[Iw[on]])

    def criterion(r):
        return float(np.sum(np.abs(r[~on])) + sgn @ r[on])

    return criterion(ratio) > margin and criterion(-ratio) > margin
