"""End-to-end acceptance criteria.

Each test prints one ``[PASS]``/``[FAIL]`` line (also collected in the
terminal summary) and asserts the criterion at its stated tolerance.
"""

import os
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from reweighted import cs, harness, io, mc
from reweighted.cs_analysis import SingularGram, dual_certificate
from reweighted.numerics import gaussian_sensing_matrix, make_rng, random_sparse_vector

from oracles import prox_objective, weighted_l1_vertex_enumeration

pytestmark = pytest.mark.acceptance


# --------------------------------------------------------------------------
# 1. no loss when reweighting an exact recovery


def test_01_no_loss_after_reweighting(acceptance_report):
    start = time.perf_counter()
    rng = make_rng(101)
    recovered = violations = drawn = 0
    while recovered < 200:
        drawn += 1
        assert drawn < 5000, "could not collect 200 exactly recovered instances"
        s = int(rng.integers(2, 17))
        m = int(rng.integers(16, 57))
        A = gaussian_sensing_matrix(m, 64, (101, drawn, 0))
        x = random_sparse_vector(64, s, (101, drawn, 1))
        p = cs.SensingProblem.from_signal(A, x)
        d1 = cs.solve_bp(p)
        if not cs.recovery_declared(d1.t, x, 1e-7):
            continue
        recovered += 1
        # one unweighted reweighting step: w = |Delta_1|
        d2 = cs.solve_weighted_bp(p, np.abs(d1.t))
        violations += not cs.recovery_declared(d2.t, x, 1e-6)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed <= 300
    acceptance_report("1", ok, f"{violations} violations over {recovered} recovered instances ({drawn} drawn), {elapsed:.0f}s")
    assert ok


# --------------------------------------------------------------------------
# 2. phase-map dominance


@pytest.fixture(scope="module")
def desk_phase_map():
    start = time.perf_counter()
    rm = harness.run_cs_phase_map(128, range(2, 41, 2), range(10, 121, 10), 20, 0.01, 20, 1e-5, seed=1)
    return rm, time.perf_counter() - start


def test_02a_phase_map_cellwise_dominance(acceptance_report, desk_phase_map):
    rm, elapsed = desk_phase_map
    frac = rm.dominance_fraction()
    ok = frac >= 0.98 and elapsed <= 1800 and rm.failed.sum() == 0
    acceptance_report("2a", ok, f"weighted >= plain in {frac:.1%} of cells (need 98%), {elapsed:.0f}s")
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="at eps=0.01 the desk grid gives +5.5%; most cells saturate for both decoders (see decisions ledger)",
)
def test_02b_phase_map_total_gain(acceptance_report, desk_phase_map):
    rm, _ = desk_phase_map
    plain, weighted = int(rm.counts_plain.sum()), int(rm.counts_weighted.sum())
    ok = weighted >= 1.15 * plain
    acceptance_report("2b", ok, f"total weighted {weighted} vs plain {plain}: ratio {weighted / plain:.4f} (need 1.15)")
    assert ok


# --------------------------------------------------------------------------
# 3 and 4. certificate soundness and the RIP/incoherence chain


@pytest.fixture(scope="module")
def certificate_suite():
    """Gaussian instances with weights of varying accuracy; collects 100 valid certificates."""
    rng = make_rng(303)
    suite = []
    n_valid = 0
    k = 0
    while n_valid < 100:
        k += 1
        assert k < 2000
        N = 128
        s = int(rng.integers(2, 12))
        m = int(rng.integers(40, 100))
        A = gaussian_sensing_matrix(m, N, (303, k, 0))
        x = random_sparse_vector(N, s, (303, k, 1))
        # weights |x| + noise at a random accuracy level
        level = 10.0 ** rng.uniform(-4, 0)
        w = np.abs(x) + level * np.abs(rng.standard_normal(N))
        try:
            rep = dual_certificate(A, x, w)
        except SingularGram:
            continue
        suite.append((A, x, w, rep))
        n_valid += rep.valid
    return suite


def test_03_certificate_soundness(acceptance_report, certificate_suite):
    start = time.perf_counter()
    valid = [(A, x, w) for A, x, w, rep in certificate_suite if rep.valid]
    violations = 0
    for A, x, w in valid:
        sol = cs.solve_weighted_bp(cs.SensingProblem.from_signal(A, x), w)
        violations += not cs.relative_error(sol.t, x) < 1e-7
    elapsed = time.perf_counter() - start
    ok = violations == 0 and len(valid) >= 100 and elapsed <= 300
    acceptance_report("3", ok, f"{violations} violations over {len(valid)} valid certificates, {elapsed:.0f}s")
    assert ok


def test_04_incoherence_chain_implies_certificate(acceptance_report, certificate_suite):
    hits = violations = 0
    for _, _, _, rep in certificate_suite:
        if rep.delta_hat < 1 and rep.a0_constant <= (1 - rep.delta_hat) / rep.mu_hat:
            hits += 1
            violations += not rep.valid
    ok = violations == 0 and hits > 0
    acceptance_report("4", ok, f"{violations} violations over {hits} instances meeting the condition ({len(certificate_suite)} in suite)")
    assert ok


# --------------------------------------------------------------------------
# 5, 6, 7. spectral thresholding and the fixed point


def _random_weights(rng, r):
    w = np.sort(rng.uniform(0.05, 2.0, r))[::-1]
    n_zero = int(rng.integers(0, r // 2 + 1)) if rng.random() < 0.3 else 0
    if n_zero:
        w[-n_zero:] = 0.0
    return w


@pytest.mark.xfail(
    strict=True,
    reason="unequal weights break non-expansiveness when singular values swap order (see decisions ledger)",
)
def test_05_non_expansive(acceptance_report):
    start = time.perf_counter()
    rng = make_rng(505)
    worst = -np.inf
    violations = 0
    for _ in range(1000):
        n1, n2 = int(rng.integers(1, 16)), int(rng.integers(1, 13))
        A = rng.standard_normal((n1, n2))
        B = A + 10.0 ** rng.uniform(-3, 0.5) * rng.standard_normal((n1, n2))
        lam = float(rng.uniform(0, 2))
        w = _random_weights(rng, min(n1, n2))
        gap = np.linalg.norm(mc.soft_threshold_weighted(A, lam, w) - mc.soft_threshold_weighted(B, lam, w)) - np.linalg.norm(A - B)
        worst = max(worst, gap)
        violations += gap > 1e-10
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed <= 60
    acceptance_report("5", ok, f"{violations} violations over 1000 pairs, max excess {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_06_prox_minimality(acceptance_report):
    rng = make_rng(606)
    violations = 0
    for _ in range(50):
        n1, n2 = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        B = rng.standard_normal((n1, n2))
        lam = float(rng.uniform(0.05, 1.0))
        tau = float(rng.choice([0.0, 0.1, 1.0]))
        w = np.sort(rng.uniform(0.1, 2.0, min(n1, n2)))[::-1]
        out = mc.soft_threshold_weighted(B, lam, w, tau)
        best = prox_objective(out, B, lam, w, tau)
        slack = 1e-12 * max(1.0, abs(best))
        candidates = [B, np.zeros_like(B)]
        nb = np.linalg.norm(B)
        for scale in (1e-3, 1e-1, 1.0):
            for _ in range(1000 // 3 + 1):
                candidates.append(out + scale * nb * rng.standard_normal(B.shape) / np.sqrt(B.size))
        violations += sum(prox_objective(c, B, lam, w, tau) < best - slack for c in candidates)
    ok = violations == 0
    acceptance_report("6", ok, f"{violations} perturbations beat the threshold output over 50 instances")
    assert ok


def convergence_bound_violations(weights: str):
    """Count ``n`` with ``|A_hat - A^n|_F`` above ``|P_Omega(A0)|_F / (tau (1 + tau)^n)``.

    ``A_hat`` is a deep solve at tol 1e-14, so gaps are only resolved down to
    ``1e-13 |A_hat|_F``; that resolution is added to the bound.
    """
    rng = make_rng(707)
    violations = checks = 0
    for tau in (0.1, 0.5, 1.0):
        for _ in range(5):
            A0 = rng.standard_normal((10, 3)) @ rng.standard_normal((3, 10))
            obs = mc.apply_mask(A0, mc.MaskSet.uniform(10, 10, 50, rng))
            lam = float(rng.uniform(0.05, 0.5))
            w = np.sort(rng.uniform(0.2, 2.0, 10))[::-1]
            if weights == "equal":
                w = np.ones(10)
            ref = mc.fixed_point_solve(obs, lam, w, tau, tol=1e-14, max_iters=100_000)
            assert ref.converged
            bound0 = np.linalg.norm(obs.values) / tau
            resolution = 1e-13 * np.linalg.norm(ref.matrix)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", mc.MaxItersExceeded)
                for n in range(1, 51):
                    An = mc.fixed_point_solve(obs, lam, w, tau, tol=1e-300, max_iters=n).matrix
                    checks += 1
                    violations += np.linalg.norm(ref.matrix - An) > bound0 / (1 + tau) ** n + resolution
    return violations, checks


@pytest.mark.xfail(
    strict=True,
    reason="the rate relies on non-expansiveness, which fails for unequal weights (see decisions ledger)",
)
def test_07_fixed_point_convergence_bound(acceptance_report):
    violations, checks = convergence_bound_violations("decreasing")
    ok = violations == 0
    acceptance_report("7", ok, f"{violations} violations over {checks} (tau, instance, n) checks")
    assert ok


# --------------------------------------------------------------------------
# 8. matrix completion phase separation


def test_08_mc_phase_separation(acceptance_report):
    start = time.perf_counter()
    res = harness.run_mc_phase(100, range(2, 31, 2), 0.3, 5, harness.MC_DESK_CONFIG, seed=8)
    elapsed = time.perf_counter() - start
    r_nnm = harness.largest_recovered_rank(res.ranks, res.nnm_error)
    r_wsst = harness.largest_recovered_rank(res.ranks, res.wsst_error)
    ok = r_wsst > r_nnm and elapsed <= 1800
    acceptance_report("8", ok, f"largest rank with median error < 1e-3: WSST {r_wsst}, NNM {r_nnm}, {elapsed:.0f}s")
    assert ok


# --------------------------------------------------------------------------
# 9. brute-force equivalence on tiny problems


def tiny_corpus():
    """Seeded instances with N <= 6, m <= 4: Gaussian, integer, rank-deficient, zero weights."""
    rng = make_rng(909)
    corpus = []
    for k in range(400):
        N = int(rng.integers(1, 7))
        m = int(rng.integers(1, min(4, N) + 1))
        kind = k % 4
        if kind == 0:
            A = rng.standard_normal((m, N))
        elif kind == 1:
            A = rng.integers(-2, 3, (m, N)).astype(float)
        elif kind == 2 and m > 1:
            A = rng.standard_normal((m, N))
            A[-1] = A[0]  # duplicated row: rank deficient
        else:
            A = rng.standard_normal((m, N))
        x = np.zeros(N)
        support = rng.choice(N, int(rng.integers(0, N + 1)), replace=False)
        x[support] = rng.standard_normal(support.size)
        y = A @ (x if rng.random() < 0.7 else rng.standard_normal(N))
        if k % 3 == 0:
            w = np.ones(N)
        else:
            w = rng.uniform(0.1, 3.0, N)
            w[rng.random(N) < 0.2] = 0.0
        corpus.append((A, y, w))
    return corpus


def test_09_vertex_enumeration_equivalence(acceptance_report):
    compared = mismatches = 0
    worst = 0.0
    for A, y, w in tiny_corpus():
        expected = weighted_l1_vertex_enumeration(A, y, w)
        p = cs.SensingProblem(A, y)
        if not np.isfinite(expected):
            with pytest.raises(cs.Infeasible):
                cs.solve_weighted_bp(p, w)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("error", cs.NotConvergedWarning)
            got = cs.solve_weighted_bp(p, w).objective
        err = abs(got - expected)
        worst = max(worst, err)
        compared += 1
        mismatches += err > 1e-9
    ok = mismatches == 0 and compared > 100
    acceptance_report("9", ok, f"{mismatches} mismatches over {compared} feasible instances, max |diff| {worst:.1e}")
    assert ok


# --------------------------------------------------------------------------
# 10. MovieLens 100K


def _movielens_100k() -> Path | None:
    candidates = [os.environ.get("REWEIGHTED_MOVIELENS_100K", ""), "data/ml-100k/u.data", "ml-100k/u.data"]
    for c in candidates:
        if c and Path(c).is_file():
            return Path(c)
    return None


@pytest.mark.skipif(_movielens_100k() is None, reason="MovieLens 100K u.data not found (set REWEIGHTED_MOVIELENS_100K)")
def test_10_movielens_100k(acceptance_report):
    start = time.perf_counter()
    data = io.read_movielens(_movielens_100k())
    cfg = mc.WsstConfig(eps_lambda=1e-3, tol=1e-3, rank_cap=harness.COLLAB_RANK_CAPS["movie-100K"])
    res = harness.run_collab_filter(data, cfg, seed=10)
    elapsed = time.perf_counter() - start
    ok = (
        abs(res.nnm_error - 0.392) <= 0.05
        and abs(res.wsst_error - 0.330) <= 0.05
        and res.wsst_rank < res.nnm_rank
        and elapsed <= 3600
    )
    acceptance_report(
        "10",
        ok,
        f"NNM {res.nnm_error:.3f} (rank {res.nnm_rank}), WSST {res.wsst_error:.3f} (rank {res.wsst_rank}), {elapsed:.0f}s",
    )
    assert ok
