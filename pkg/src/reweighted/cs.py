"""Basis pursuit, weighted basis pursuit and iterative reweighting.

The equality-constrained l1 problem ``min |u|_1 s.t. B u = y`` is solved by
ADMM: the x-step is the exact Euclidean projection onto ``{B u = y}``
through a cached pseudo-inverse, the z-step is entrywise shrinkage.  Every
``polish_every`` iterations the current support is handed to a
least-squares polish whose optimality is certified by an explicit dual
vector (KKT check), which returns vertex solutions at machine precision.
Problems that neither polish nor close the duality gap within
``fallback_after`` iterations are re-solved as a linear program (HiGHS) and
polished the same way.

Weighted problems ``min sum |t_i|/w_i s.t. A t = y`` are reduced to the
plain one by the change of variables ``t_i = w_i u_i`` on the support of
``w``; coordinates with ``w_i = 0`` are forced to zero.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog

from .cs_analysis import a0_constant
from .numerics import as_matrix

logger = logging.getLogger(__name__)

__all__ = [
    "Infeasible",
    "NotConvergedWarning",
    "ZeroGroundTruth",
    "SolverConfig",
    "SensingProblem",
    "WeightVector",
    "BpSolution",
    "ReweightTrace",
    "Certification",
    "ERR_FLOOR",
    "solve_bp",
    "solve_weighted_bp",
    "reweight_iterate",
    "certify_exact_recovery",
    "recovery_declared",
    "relative_error",
    "numerical_support",
]

# relative errors below this are clamped before taking logs
ERR_FLOOR = 1e-16


class Infeasible(ValueError):
    """``y`` is not in the range of the columns allowed by the weights."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class NotConvergedWarning(RuntimeWarning):
    """Iteration cap reached; the returned solution carries ``converged=False``."""


class ZeroGroundTruth(ValueError):
    """Relative error requested against the zero vector."""


@dataclass(frozen=True)
class SolverConfig:
    feas_tol: float = 1e-10
    obj_tol: float = 1e-9
    stab_tol: float = 1e-8
    max_iter: int = 50_000
    polish_every: int = 20
    fallback_after: int = 2_000
    lp_fallback: bool = True
    support_tol: float = 1e-8

    def __post_init__(self):
        if min(self.feas_tol, self.obj_tol, self.stab_tol, self.support_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1 or self.polish_every < 1:
            raise ValueError("iteration counts must be positive")


@dataclass(frozen=True)
class SensingProblem:
    A: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        y = np.asarray(self.y, dtype=np.float64)
        if y.shape != (A.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({A.shape[0]},)")
        if not np.all(np.isfinite(y)):
            raise ValueError("y has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_signal(cls, A, x) -> "SensingProblem":
        A = as_matrix(A, "A")
        return cls(A, A @ np.asarray(x, dtype=np.float64))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]


class WeightVector:
    """Non-negative weights; ``t/0 = inf`` for ``t > 0`` and ``0/0 = 0``."""

    __slots__ = ("w",)

    def __init__(self, w):
        w = np.array(w, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        self.w = w

    def __len__(self) -> int:
        return self.w.size

    def __repr__(self) -> str:
        return f"WeightVector({self.w!r})"

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.w > 0)

    def inverse(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.w > 0, 1.0 / np.where(self.w > 0, self.w, 1.0), np.inf)

    def weighted_l1(self, t) -> float:
        t = np.abs(np.asarray(t, dtype=np.float64))
        off = self.w == 0
        if np.any(t[off] > 0):
            return np.inf
        return float(np.sum(t[~off] / self.w[~off]))

    @classmethod
    def coerce(cls, w) -> "WeightVector":
        return w if isinstance(w, cls) else cls(w)


@dataclass
class BpSolution:
    t: np.ndarray
    objective: float
    feasibility_residual: float
    iterations: int
    converged: bool
    method: str = "admm"


@dataclass
class ReweightTrace:
    epsilon: float
    iterates: list[np.ndarray]
    per_iteration_error: list[float] = field(default_factory=list)
    per_iteration_C: list[float] = field(default_factory=list)
    solutions: list[BpSolution] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


class Certification(NamedTuple):
    certified: bool
    iterate: np.ndarray | None
    status: str
    rounds: int


# --------------------------------------------------------------------------
# l1 core


def _pinv(B: np.ndarray) -> np.ndarray:
    rcond = max(B.shape) * np.finfo(np.float64).eps
    return np.linalg.pinv(B, rcond=rcond)


def _kkt_polish(B, y, cols, nu0, cfg: SolverConfig):
    """Least-squares solve on ``cols``; return it only if a dual certifies optimality."""
    BS = B[:, cols]
    t, _, rank, _ = np.linalg.lstsq(BS, y, rcond=None)
    if rank < cols.size:
        return None
    ynorm = max(1.0, float(np.linalg.norm(y)))
    if np.linalg.norm(BS @ t - y) > cfg.feas_tol * ynorm:
        return None
    active = t != 0
    if not np.any(active):
        return None
    Ba = BS[:, active]
    sg = np.sign(t[active])
    corr, *_ = np.linalg.lstsq(Ba.T, sg - Ba.T @ nu0, rcond=None)
    nu = nu0 + corr
    slack = 0.1 * cfg.obj_tol
    if np.max(np.abs(Ba.T @ nu - sg)) > slack:
        return None
    if np.max(np.abs(B.T @ nu)) > 1.0 + slack:
        return None
    u = np.zeros(B.shape[1])
    u[cols] = t
    return u


def _duality_gap(B, y, x, nu) -> float:
    scale = max(1.0, float(np.max(np.abs(B.T @ nu))))
    return float(np.sum(np.abs(x)) - y @ nu / scale)


def _lp_l1(B, y, cfg: SolverConfig):
    n = B.shape[1]
    res = linprog(
        np.ones(2 * n),
        A_eq=np.hstack([B, -B]),
        b_eq=y,
        bounds=(0, None),
        method="highs-ds",
    )
    if res.status != 0 or res.x is None:
        return None, False
    u = res.x[:n] - res.x[n:]
    nu0 = np.asarray(res.eqlin.marginals, dtype=np.float64)
    cols = np.flatnonzero(u)
    if 0 < cols.size <= B.shape[0]:
        polished = _kkt_polish(B, y, cols, nu0, cfg)
        if polished is not None:
            return polished, True
    u = u - _pinv(B) @ (B @ u - y)
    gap = _duality_gap(B, y, u, nu0)
    return u, gap <= cfg.obj_tol * max(1.0, float(np.sum(np.abs(u))))


def _l1_affine(B: np.ndarray, y: np.ndarray, cfg: SolverConfig):
    """Solve ``min |u|_1 s.t. B u = y``; returns ``(u, iterations, converged, method)``."""
    m, n = B.shape
    if not np.any(y):
        return np.zeros(n), 0, True, "trivial"
    P = _pinv(B)
    u_ls = P @ y
    # shrinkage threshold (1/rho) scaled to the data
    lam = max(float(np.max(np.abs(u_ls))), np.finfo(np.float64).tiny) / 10.0
    z = u_ls.copy()
    scaled_dual = np.zeros(n)
    budget = cfg.max_iter
    if cfg.lp_fallback:
        budget = min(budget, cfg.fallback_after)
    x = z
    for it in range(1, budget + 1):
        v = z - scaled_dual
        x = v - P @ (B @ v - y)
        w = x + scaled_dual
        z = np.sign(w) * np.maximum(np.abs(w) - lam, 0.0)
        scaled_dual = w - z
        if it % cfg.polish_every:
            continue
        nu = P.T @ (scaled_dual / lam)
        cols = np.flatnonzero(z)
        if 0 < cols.size <= m:
            polished = _kkt_polish(B, y, cols, nu, cfg)
            if polished is not None:
                return polished, it, True, "admm+polish"
        if _duality_gap(B, y, x, nu) <= cfg.obj_tol * max(1.0, float(np.sum(np.abs(x)))):
            return x, it, True, "admm"
    if cfg.lp_fallback:
        u, ok = _lp_l1(B, y, cfg)
        if u is not None:
            return u, budget, ok, "lp"
    return x, budget, False, "admm"


# --------------------------------------------------------------------------
# public solvers


def _feasibility_residual(A, t, y) -> float:
    return float(np.linalg.norm(A @ t - y))


def solve_weighted_bp(p: SensingProblem, w, cfg: SolverConfig | None = None) -> BpSolution:
    """Minimize ``sum_{i in I_w} |t_i| / w_i`` subject to ``A t = y``, ``t = 0`` off ``I_w``.

    Raises
    ------
    Infeasible
        If ``y`` is not in the span of the columns ``A_{I_w}``.
    """
    cfg = cfg or SolverConfig()
    wv = WeightVector.coerce(w)
    if len(wv) != p.N:
        raise ValueError(f"weight vector has length {len(wv)}, expected {p.N}")
    I = wv.support
    ynorm = max(1.0, float(np.linalg.norm(p.y)))
    t = np.zeros(p.N)
    if I.size == 0:
        if np.any(p.y):
            raise Infeasible("empty weight support cannot reproduce y != 0")
        return BpSolution(t, 0.0, 0.0, 0, True, "trivial")

    AI = p.A[:, I]
    z, *_ = np.linalg.lstsq(AI, p.y, rcond=None)
    if np.linalg.norm(AI @ z - p.y) > cfg.feas_tol * ynorm:
        raise Infeasible("y is not in the range of A restricted to the weight support")

    # weights are scale-free for the argmin; normalize for conditioning
    wI = wv.w[I] / np.max(wv.w[I])
    B = AI * wI
    u, iterations, converged, method = _l1_affine(B, p.y, cfg)
    tI = wI * u
    residual = _feasibility_residual(AI, tI, p.y)
    if residual > cfg.feas_tol * ynorm and method != "admm+polish":
        tI = tI - np.linalg.lstsq(AI, AI @ tI - p.y, rcond=None)[0]
        residual = _feasibility_residual(AI, tI, p.y)
    t[I] = tI
    if residual > cfg.feas_tol * ynorm:
        converged = False
    if not converged:
        warnings.warn(
            f"l1 solve stopped after {iterations} iterations without certificate",
            NotConvergedWarning,
            stacklevel=2,
        )
    return BpSolution(t, wv.weighted_l1(t), residual, iterations, converged, method)


def solve_bp(p: SensingProblem, cfg: SolverConfig | None = None) -> BpSolution:
    """Basis pursuit: ``min |t|_1 s.t. A t = y``.

    Raises
    ------
    Infeasible
        If ``y`` is not in the range of ``A``.
    """
    return solve_weighted_bp(p, np.ones(p.N), cfg)


def relative_error(x_hat, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    nx = float(np.linalg.norm(x))
    if nx == 0:
        raise ZeroGroundTruth("relative error undefined for x = 0")
    return float(np.linalg.norm(np.asarray(x_hat, dtype=np.float64) - x)) / nx


def recovery_declared(x_hat, x, eta: float) -> bool:
    """True when ``|x_hat - x|_2 / |x|_2 < eta``."""
    return relative_error(x_hat, x) < eta


def numerical_support(t, rel_tol: float = 1e-8) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    top = float(np.max(np.abs(t))) if t.size else 0.0
    if top == 0:
        return np.array([], dtype=int)
    return np.flatnonzero(np.abs(t) > rel_tol * top)


def _log_error(t, x) -> float:
    return float(np.log(max(relative_error(t, x), ERR_FLOOR)))


def reweight_iterate(
    p: SensingProblem,
    epsilon: float,
    k_max: int,
    cfg: SolverConfig | None = None,
    ground_truth=None,
    stop_when_stable: bool = False,
) -> ReweightTrace:
    """Iterates ``Delta_1, ..., Delta_{k_max}`` with weights ``|Delta_k| + epsilon``.

    ``iterates[0]`` is plain basis pursuit.  With ``ground_truth`` the trace also
    records ``err_k = log(|Delta_k - x|_2 / |x|_2)`` and the weight-accuracy
    constant ``C^k`` of the weights ``|Delta_k| + epsilon`` on the support of x.

    With ``stop_when_stable`` the solves stop once two consecutive iterates agree
    within ``cfg.stab_tol`` and the last iterate is repeated up to ``k_max``.
    """
    cfg = cfg or SolverConfig()
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    x = None
    support = None
    if ground_truth is not None:
        x = np.asarray(ground_truth, dtype=np.float64)
        if x.shape != (p.N,):
            raise ValueError("ground truth has the wrong length")
        support = np.flatnonzero(x)

    trace = ReweightTrace(epsilon=epsilon, iterates=[])

    def record(sol: BpSolution):
        trace.iterates.append(sol.t)
        trace.solutions.append(sol)
        if x is not None:
            trace.per_iteration_error.append(_log_error(sol.t, x) if support.size else -np.inf)
            trace.per_iteration_C.append(a0_constant(np.abs(sol.t) + epsilon, support))

    w = None
    for k in range(k_max):
        try:
            sol = solve_bp(p, cfg) if k == 0 else solve_weighted_bp(p, w, cfg)
        except Infeasible as exc:
            raise Infeasible(f"reweighting step {k + 1}: {exc}", iteration=k + 1) from exc
        prev = trace.iterates[-1] if trace.iterates else None
        record(sol)
        if stop_when_stable and prev is not None and _agree(prev, sol.t, cfg.stab_tol):
            while len(trace.iterates) < k_max:
                record(sol)
            break
        w = np.abs(sol.t) + epsilon
    return trace


def _agree(a, b, tol) -> bool:
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    return float(np.linalg.norm(a - b)) <= tol * scale


def certify_exact_recovery(p: SensingProblem, cfg: SolverConfig | None = None, r_max: int = 10) -> Certification:
    """Run the unweighted sequence ``w = |Delta_k|`` until two iterates agree.

    ``certified`` is true when the sequence stabilizes on a vector whose
    numerical support has at most ``floor(m/2)`` entries.  ``status`` is one of
    ``"certified"``, ``"too_dense"`` (stable but not sparse enough) or
    ``"not_stabilized"`` (``r_max`` reached).
    """
    cfg = cfg or SolverConfig()
    if r_max < 2:
        raise ValueError("r_max must be at least 2")
    prev = None
    for k in range(r_max):
        try:
            sol = solve_bp(p, cfg) if k == 0 else solve_weighted_bp(p, np.abs(prev), cfg)
        except Infeasible as exc:
            raise Infeasible(f"certification step {k + 1}: {exc}", iteration=k + 1) from exc
        if prev is not None and _agree(prev, sol.t, cfg.stab_tol):
            sparse = numerical_support(sol.t, cfg.support_tol).size <= p.m // 2
            return Certification(sparse, sol.t, "certified" if sparse else "too_dense", k + 1)
        prev = sol.t
    logger.debug("sequence did not stabilize within %d rounds", r_max)
    return Certification(False, None, "not_stabilized", r_max)
