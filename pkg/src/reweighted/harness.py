"""Experiment runners: recovery phase maps, weight-accuracy tracking, matrix
completion phase sweeps, image inpainting and collaborative filtering.

Every random instance is drawn from a generator seeded by the tuple
``(seed, tag, cell indices..., rep)``, so results do not depend on the order
in which cells are computed and both decoders of a cell see the same data.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import cs, mc
from .io import RatingsDataset
from .numerics import gaussian_sensing_matrix, make_rng, random_sparse_vector

logger = logging.getLogger(__name__)

__all__ = [
    "EmptyTestSet",
    "RecoveryMap",
    "A0Trace",
    "McPhaseResult",
    "InpaintingResult",
    "CollabResult",
    "threshold_curve",
    "run_cs_phase_map",
    "run_a0_tracking",
    "a0_correlation_holds",
    "run_mc_phase",
    "largest_recovered_rank",
    "run_inpainting",
    "synthetic_image",
    "split_ratings",
    "run_collab_filter",
    "MC_DESK_CONFIG",
    "COLLAB_RANK_CAPS",
]

# instance tags keep the seed streams of different runners apart
_TAG_CS, _TAG_A0, _TAG_MC, _TAG_INPAINT, _TAG_SPLIT = 1, 2, 3, 4, 5

# tol tight enough that desk-scale errors below 1e-3 are not limited by the stop rule
MC_DESK_CONFIG = mc.WsstConfig(eps_lambda=1e-4, q=0.7, K=50, tol=1e-6, max_inner_iters=100)

COLLAB_RANK_CAPS = {"movie-100K": 200, "movie-1M": 200, "movie-10M": 50, "desk": 50}


class EmptyTestSet(ValueError):
    pass


def _map(fn: Callable, jobs: Sequence, workers: int) -> list:
    """Results of ``fn`` over ``jobs`` in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# --------------------------------------------------------------------------
# compressed sensing


def threshold_curve(s_values, m_values) -> np.ndarray:
    """``s log(e m / s)`` on the ``(s, m)`` grid; zero for ``s = 0``."""
    s = np.asarray(s_values, dtype=np.float64)[:, None]
    m = np.asarray(m_values, dtype=np.float64)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = s * np.log(np.e * m / s)
    return np.where(s > 0, out, 0.0)


@dataclass
class RecoveryMap:
    """Exact-recovery counts; rows index ``s_values``, columns ``m_values``."""

    s_values: np.ndarray
    m_values: np.ndarray
    counts_plain: np.ndarray
    counts_weighted: np.ndarray
    repetitions: int
    eta: float
    threshold_curve: np.ndarray
    failed: np.ndarray = None

    def __post_init__(self):
        shape = (len(self.s_values), len(self.m_values))
        if self.failed is None:
            self.failed = np.zeros(shape, dtype=int)
        for grid in (self.counts_plain, self.counts_weighted, self.failed, self.threshold_curve):
            if np.shape(grid) != shape:
                raise ValueError("grid shapes must match (len(s_values), len(m_values))")
        for grid in (self.counts_plain, self.counts_weighted):
            if np.any(grid < 0) or np.any(grid > self.repetitions):
                raise ValueError("counts must lie in [0, repetitions]")

    CSV_HEADER = ("s", "m", "repetitions", "eta", "count_plain", "count_weighted", "failed", "threshold")

    def csv_rows(self) -> list[tuple]:
        return [
            (
                int(s),
                int(m),
                self.repetitions,
                self.eta,
                int(self.counts_plain[i, j]),
                int(self.counts_weighted[i, j]),
                int(self.failed[i, j]),
                float(self.threshold_curve[i, j]),
            )
            for i, s in enumerate(self.s_values)
            for j, m in enumerate(self.m_values)
        ]

    def dominance_fraction(self) -> float:
        """Fraction of cells where the weighted count is at least the plain count."""
        return float(np.mean(self.counts_weighted >= self.counts_plain))


def _cs_instance(N, s, m, seed, tag, rep):
    A = gaussian_sensing_matrix(m, N, (seed, tag, s, m, rep, 0))
    x = random_sparse_vector(N, s, (seed, tag, s, m, rep, 1))
    return A, x


def _cs_cell(job) -> tuple[int, int, int]:
    N, s, m, reps, epsilon, k_weighted, eta, seed, cfg = job
    plain = weighted = failed = 0
    for rep in range(reps):
        A, x = _cs_instance(N, s, m, seed, _TAG_CS, rep)
        if s == 0:
            # the zero signal is recovered exactly by both decoders
            plain += 1
            weighted += 1
            continue
        p = cs.SensingProblem.from_signal(A, x)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", cs.NotConvergedWarning)
                trace = cs.reweight_iterate(p, epsilon, k_weighted, cfg, stop_when_stable=True)
        except (cs.Infeasible, ValueError, np.linalg.LinAlgError) as exc:
            logger.warning("cell s=%d m=%d rep=%d failed: %s", s, m, rep, exc)
            failed += 1
            continue
        plain += cs.recovery_declared(trace.iterates[0], x, eta)
        weighted += cs.recovery_declared(trace.final, x, eta)
    return plain, weighted, failed


def run_cs_phase_map(
    N: int,
    s_grid: Iterable[int],
    m_grid: Iterable[int],
    reps: int,
    epsilon: float,
    k_weighted: int,
    eta: float,
    seed: int,
    cfg: cs.SolverConfig | None = None,
    workers: int = 1,
) -> RecoveryMap:
    """Count exact recoveries of plain and reweighted basis pursuit on an ``(s, m)`` grid.

    Each repetition draws ``A`` with ``N(0, 1/m)`` entries and an ``s``-sparse
    Gaussian ``x``; the plain decoder is the first reweighting iterate, the
    weighted decoder the ``k_weighted``-th, so both see the same ``(A, x)``.
    Reweighting stops early once two iterates agree to ``cfg.stab_tol``.
    A repetition whose solves raise is counted in ``failed`` instead of
    aborting the grid.
    """
    s_values = np.asarray(list(s_grid), dtype=int)
    m_values = np.asarray(list(m_grid), dtype=int)
    if s_values.size == 0 or m_values.size == 0:
        raise ValueError("grids must be non-empty")
    if reps < 1 or k_weighted < 1:
        raise ValueError("reps and k_weighted must be positive")
    if np.any(s_values < 0) or np.any(s_values > N) or np.any(m_values < 1):
        raise ValueError("need 0 <= s <= N and m >= 1")
    cfg = cfg or cs.SolverConfig()
    jobs = [(N, int(s), int(m), reps, epsilon, k_weighted, eta, seed, cfg) for s in s_values for m in m_values]
    results = np.array(_map(_cs_cell, jobs, workers), dtype=int).reshape(s_values.size, m_values.size, 3)
    return RecoveryMap(
        s_values=s_values,
        m_values=m_values,
        counts_plain=results[..., 0],
        counts_weighted=results[..., 1],
        repetitions=reps,
        eta=eta,
        threshold_curve=threshold_curve(s_values, m_values),
        failed=results[..., 2],
    )


@dataclass
class A0Trace:
    """Per-iteration ``log10 C^k`` and ``err_k`` of one repetition."""

    rep: int
    log10_C: np.ndarray
    err: np.ndarray
    failed_at: int | None = None

    @property
    def recovered(self) -> bool:
        return bool(self.err.size and self.err[-1] < math.log(1e-6))


def _a0_rep(job) -> A0Trace:
    N, m, s, K, epsilon, seed, cfg, rep = job
    A = gaussian_sensing_matrix(m, N, (seed, _TAG_A0, rep, 0))
    x = random_sparse_vector(N, s, (seed, _TAG_A0, rep, 1))
    p = cs.SensingProblem.from_signal(A, x)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", cs.NotConvergedWarning)
            trace = cs.reweight_iterate(p, epsilon, K, cfg, ground_truth=x)
    except cs.Infeasible as exc:
        logger.warning("a0 repetition %d failed: %s", rep, exc)
        return A0Trace(rep, np.array([]), np.array([]), failed_at=exc.iteration)
    with np.errstate(divide="ignore"):
        log_c = np.log10(np.asarray(trace.per_iteration_C, dtype=np.float64))
    return A0Trace(rep, log_c, np.asarray(trace.per_iteration_error, dtype=np.float64))


def run_a0_tracking(
    N: int,
    m: int,
    s: int,
    reps: int,
    K: int,
    epsilon: float,
    seed: int,
    cfg: cs.SolverConfig | None = None,
    workers: int = 1,
) -> list[A0Trace]:
    """Track the weight-accuracy constant ``C^k`` and ``err_k`` over ``K`` reweighting steps."""
    if not (0 <= s <= N and 1 <= m <= N):
        raise ValueError("need s <= N and m <= N")
    cfg = cfg or cs.SolverConfig()
    jobs = [(N, m, s, K, epsilon, seed, cfg, rep) for rep in range(reps)]
    return _map(_a0_rep, jobs, workers)


def a0_correlation_holds(traces: Sequence[A0Trace]) -> bool:
    """Recovered repetitions end with ``C^K`` below the median final ``C^K`` of the others.

    Vacuously true when either group is empty.
    """
    done = [t for t in traces if t.err.size]
    good = [t.log10_C[-1] for t in done if t.recovered]
    bad = [t.log10_C[-1] for t in done if not t.recovered]
    if not good or not bad:
        return True
    return bool(np.all(np.asarray(good) < np.median(bad)))


# --------------------------------------------------------------------------
# matrix completion


def _relative_error(estimate, truth) -> float:
    nt = float(np.linalg.norm(truth))
    diff = float(np.linalg.norm(np.asarray(estimate) - truth))
    if nt == 0:
        return diff
    return diff / nt


@dataclass
class McPhaseResult:
    """Per ``(rank, rep)`` errors and recovered ranks; arrays are ``len(ranks) x reps``."""

    ranks: np.ndarray
    nnm_error: np.ndarray
    wsst_error: np.ndarray
    nnm_rank: np.ndarray
    wsst_rank: np.ndarray

    CSV_HEADER = ("rank", "rep", "nnm_error", "wsst_error", "nnm_rank", "wsst_rank")

    def csv_rows(self) -> list[tuple]:
        return [
            (int(r), j, self.nnm_error[i, j], self.wsst_error[i, j], int(self.nnm_rank[i, j]), int(self.wsst_rank[i, j]))
            for i, r in enumerate(self.ranks)
            for j in range(self.nnm_error.shape[1])
        ]


def _mc_rep(job):
    n, r, count, cfg, seed, rep = job
    rng = make_rng((seed, _TAG_MC, r, rep))
    A0 = rng.standard_normal((n, r)) @ rng.standard_normal((r, n))
    obs = mc.apply_mask(A0, mc.MaskSet.uniform(n, n, count, rng))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", (mc.MaxItersExceeded, mc.DegenerateWeights))
        nnm = mc.nnm_solve(obs, cfg)
        ws = mc.wsst(obs, nnm, cfg)
    return _relative_error(nnm.matrix, A0), _relative_error(ws.matrix, A0), nnm.rank, ws.rank


def run_mc_phase(
    n: int,
    rank_grid: Iterable[int],
    sample_frac: float,
    reps: int,
    cfg: mc.WsstConfig,
    seed: int,
    workers: int = 1,
) -> McPhaseResult:
    """NNM versus WSST on ``n x n`` Gaussian low-rank matrices, uniformly masked.

    The mask holds ``ceil(sample_frac n^2)`` cells drawn without replacement;
    both solvers (WSST starting from the NNM solution) run on the same data.
    """
    ranks = np.asarray(list(rank_grid), dtype=int)
    if ranks.size == 0 or np.any(ranks < 0) or np.any(ranks > n):
        raise ValueError("ranks must lie in [0, n]")
    if not 0 < sample_frac <= 1:
        raise ValueError("sample_frac must lie in (0, 1]")
    count = math.ceil(sample_frac * n * n)
    jobs = [(n, int(r), count, cfg, seed, rep) for r in ranks for rep in range(reps)]
    out = np.array(_map(_mc_rep, jobs, workers), dtype=np.float64).reshape(ranks.size, reps, 4)
    return McPhaseResult(
        ranks=ranks,
        nnm_error=out[..., 0],
        wsst_error=out[..., 1],
        nnm_rank=out[..., 2].astype(int),
        wsst_rank=out[..., 3].astype(int),
    )


def largest_recovered_rank(ranks, errors, threshold: float = 1e-3) -> int:
    """Largest rank whose median error over repetitions is below ``threshold`` (0 if none)."""
    med = np.median(np.asarray(errors), axis=1)
    ok = np.asarray(ranks)[med < threshold]
    return int(ok.max()) if ok.size else 0


@dataclass
class InpaintingResult:
    truth: np.ndarray
    observed: np.ndarray
    nnm: np.ndarray
    wsst: np.ndarray
    nnm_error: float
    wsst_error: float
    nnm_rank: int
    wsst_rank: int
    nnm_diff: np.ndarray = field(repr=False, default=None)
    wsst_diff: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self.nnm_diff = np.abs(self.nnm - self.truth)
        self.wsst_diff = np.abs(self.wsst - self.truth)


def synthetic_image(n: int = 64, seed: int = 0) -> np.ndarray:
    """Smooth structured test image in [0, 1] (sums of separable bumps and stripes)."""
    rng = make_rng((seed, _TAG_INPAINT, 0))
    t = np.linspace(0.0, 1.0, n)
    img = np.zeros((n, n))
    for _ in range(8):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        wx, wy = rng.uniform(0.05, 0.3, 2)
        img += rng.uniform(0.3, 1.0) * np.outer(np.exp(-((t - cy) / wy) ** 2), np.exp(-((t - cx) / wx) ** 2))
    img += 0.3 * np.outer(np.cos(6 * np.pi * t) ** 2, np.ones(n))
    img -= img.min()
    return img / img.max()


def run_inpainting(
    image,
    truncate_rank: int,
    sample_frac: float,
    cfg: mc.WsstConfig,
    seed: int,
) -> InpaintingResult:
    """Complete a uniformly masked, rank-truncated image with NNM and WSST."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.min() < 0 or image.max() > 1:
        raise ValueError("image must be 2-D with entries in [0, 1]")
    if not 1 <= truncate_rank <= min(image.shape):
        raise ValueError("truncate_rank must lie in [1, min(image.shape)]")
    if not 0 < sample_frac <= 1:
        raise ValueError("sample_frac must lie in (0, 1]")
    u, s, vt = np.linalg.svd(image, full_matrices=False)
    truth = (u[:, :truncate_rank] * s[:truncate_rank]) @ vt[:truncate_rank]
    n1, n2 = truth.shape
    mask = mc.MaskSet.uniform(n1, n2, math.ceil(sample_frac * n1 * n2), make_rng((seed, _TAG_INPAINT, 1)))
    obs = mc.apply_mask(truth, mask)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", mc.MaxItersExceeded)
        nnm = mc.nnm_solve(obs, cfg)
        ws = mc.wsst(obs, nnm, cfg)
    observed = np.ones_like(truth)
    observed[mask.rows, mask.cols] = obs.values
    return InpaintingResult(
        truth=truth,
        observed=observed,
        nnm=nnm.matrix,
        wsst=ws.matrix,
        nnm_error=_relative_error(nnm.matrix, truth),
        wsst_error=_relative_error(ws.matrix, truth),
        nnm_rank=nnm.rank,
        wsst_rank=ws.rank,
    )


# --------------------------------------------------------------------------
# collaborative filtering


def split_ratings(d: RatingsDataset, seed: int) -> tuple[RatingsDataset, RatingsDataset]:
    """Per user, a uniformly random ``ceil(n_u / 2)`` ratings go to train, the rest to test."""
    if len(d) == 0:
        raise ValueError("dataset is empty")
    rng = make_rng((seed, _TAG_SPLIT))
    order = np.argsort(d.users, kind="stable")
    users = d.users[order]
    starts = np.flatnonzero(np.r_[True, users[1:] != users[:-1]])
    ends = np.r_[starts[1:], users.size]
    train = np.zeros(len(d), dtype=bool)
    for a, b in zip(starts, ends):
        idx = order[a:b]
        pick = rng.permutation(idx.size)[: (idx.size + 1) // 2]
        train[idx[pick]] = True
    return d.subset(np.flatnonzero(train)), d.subset(np.flatnonzero(~train))


@dataclass
class CollabResult:
    nnm_error: float
    wsst_error: float
    nnm_rank: int
    wsst_rank: int
    n_users: int
    n_items: int
    n_train: int
    n_test: int


def run_collab_filter(d: RatingsDataset, cfg: mc.WsstConfig, seed: int) -> CollabResult:
    """Held-out relative error of NNM and WSST on a per-user half split of the ratings.

    Rows are users and columns items of the full dataset; only the training
    half is observed.  The error is
    ``|P_test(A_hat) - P_test(A0)|_F / |P_test(A0)|_F``.
    """
    train, test = split_ratings(d, seed)
    if len(test) == 0:
        raise EmptyTestSet("no held-out ratings: every user has a single rating")
    user_ids, item_ids = d.user_ids, d.item_ids
    shape = (user_ids.size, item_ids.size)

    def cells(part: RatingsDataset):
        return np.searchsorted(user_ids, part.users), np.searchsorted(item_ids, part.items)

    tr_r, tr_c = cells(train)
    te_r, te_c = cells(test)
    obs = mc.MaskedMatrix(mc.MaskSet(*shape, tr_r, tr_c), train.ratings)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", mc.MaxItersExceeded)
        nnm = mc.nnm_solve(obs, cfg)
        ws = mc.wsst(obs, nnm, cfg)
    truth_norm = float(np.linalg.norm(test.ratings))

    def err(res: mc.CompletionResult) -> float:
        return float(np.linalg.norm(res.values_at(te_r, te_c) - test.ratings)) / truth_norm

    return CollabResult(
        nnm_error=err(nnm),
        wsst_error=err(ws),
        nnm_rank=nnm.rank,
        wsst_rank=ws.rank,
        n_users=shape[0],
        n_items=shape[1],
        n_train=len(train),
        n_test=len(test),
    )
