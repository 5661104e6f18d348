import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from fsagp import fsa
from fsagp.covkernels import TaperSpec, default_params, parent_cov_matrix
from fsagp.fsa import (DataCovOps, KnotSet, TaperedPattern, basis_matrix, build_tapered_v, gaussian_loglik,
                       knot_precision, logdet_sigma_z, neighbor_pairs, smw_solve)
from fsagp.harness import GRID, StudyDesign


def dense_sigma_oracle(params, locs, knots, L, noise_var):
    """B W B' + T o (C_P - B W B') + noise I from the parent covariance alone."""
    n = locs.shape[0]
    allc = parent_cov_matrix(params, np.vstack([locs, knots])) if len(knots) else parent_cov_matrix(params, locs)
    C = allc[:n, :n]
    if len(knots):
        Csk, Ckk = allc[:n, n:], allc[n:, n:]
        Cnu = Csk @ np.linalg.solve(Ckk, Csk.T)
    else:
        Cnu = np.zeros((n, n))
    H = np.sqrt(((locs[:, None, :] - locs[None, :, :]) ** 2).sum(-1))
    return Cnu + TaperSpec(L)(H) * (C - Cnu) + noise_var * np.eye(n)


def random_instance(rng, n, r, d):
    centers = rng.random((3, d))
    p = default_params(d, rng.normal(0, 0.3), math.log(0.03), basis_centers=centers, basis_scale=0.4)
    p = p.with_free_vector(rng.normal(p.free_vector(), 0.5 * p.prior_sd_vector()))
    locs = rng.random((n, d))
    knots = rng.random((r, d))
    return p, locs, knots


INSTANCES = [(int(n), int(r), int(d)) for n, r, d in zip(
    np.random.default_rng(42).integers(20, 201, 20), np.random.default_rng(43).integers(0, 21, 20), [1, 2] * 10)]


@pytest.mark.parametrize("n,r,d", INSTANCES)
def test_smw_and_logdet_match_dense(n, r, d):
    rng = np.random.default_rng(n * 1000 + r * 10 + d)
    p, locs, knots = random_instance(rng, n, r, d)
    L = 0.15 if d == 1 else 0.25
    noise = 0.05
    S = dense_sigma_oracle(p, locs, knots, L, noise)
    ops = DataCovOps(TaperedPattern(locs, L), p, KnotSet(knots, d), noise)
    rhs = rng.normal(size=(n, 2))
    x = smw_solve(ops, rhs)
    ref = np.linalg.solve(S, rhs)
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)
    assert logdet_sigma_z(ops) == pytest.approx(np.linalg.slogdet(S)[1], abs=1e-6)
    z = rng.normal(size=n)
    assert gaussian_loglik(ops, z) == pytest.approx(multivariate_normal(np.zeros(n), S).logpdf(z), abs=1e-6)


def test_dense_path_matches_sparse_path():
    rng = np.random.default_rng(5)
    p, locs, knots = random_instance(rng, 80, 6, 2)
    a = DataCovOps(TaperedPattern(locs, 0.2), p, KnotSet(knots, 2), 0.1)
    b = DataCovOps(TaperedPattern(locs, 0.2, dense=True), p, KnotSet(knots, 2), 0.1)
    z = rng.normal(size=80)
    assert a.loglik(z) == pytest.approx(b.loglik(z), abs=1e-9)
    np.testing.assert_allclose(a.solve(z), b.solve(z), rtol=1e-9)


def test_trivial_cases():
    rng = np.random.default_rng(6)
    p, locs, _ = random_instance(rng, 30, 0, 1)
    ops = DataCovOps(TaperedPattern(locs, 0.1), p, KnotSet(np.zeros((0, 1))), 0.2)
    V = ops.pattern.to_dense(ops.v_vals)
    rhs = rng.normal(size=30)
    np.testing.assert_allclose(ops.solve(rhs), np.linalg.solve(V, rhs), rtol=1e-11)
    np.testing.assert_array_equal(ops.solve(np.zeros(30)), np.zeros(30))
    # r = 0: remainder is the tapered parent covariance
    C = parent_cov_matrix(p, locs)
    np.testing.assert_allclose(ops.pattern.to_dense(ops.vdelta_vals),
                               ops.pattern.to_dense(ops.pattern.taper_vals * C[ops.pattern.I, ops.pattern.J]), rtol=1e-13)
    # single observation with unit variance and zero residual
    one = default_params(1, math.log(math.sqrt(0.5)), 0.0)
    ops1 = DataCovOps(TaperedPattern(np.array([[0.0]]), 1.0), one, KnotSet(np.zeros((0, 1))), 0.5)
    assert ops1.loglik(np.zeros(1)) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_diagonal_v_logdet():
    # locations further apart than L: V is diagonal
    locs = np.arange(10.0)[:, None] * 5.0
    p = default_params(1, math.log(2.0), 0.0)
    ops = DataCovOps(TaperedPattern(locs, 1.0), p, KnotSet(np.zeros((0, 1))), 0.5)
    assert ops.pattern.nnz == 10
    assert ops.logdet() == pytest.approx(10 * math.log(4.5), rel=1e-14)


def test_remainder_vanishes_with_knots_at_data():
    locs = np.linspace(0, 1, 12)[:, None]
    p = default_params(1, 0.0, math.log(0.05))
    ops = DataCovOps(TaperedPattern(locs, 10.0), p, KnotSet(locs), 0.3)
    V = ops.pattern.to_dense(ops.v_vals)
    np.testing.assert_allclose(V, 0.3 * np.eye(12), atol=1e-8)


def test_knot_updates_match_rebuild():
    rng = np.random.default_rng(8)
    p, locs, knots = random_instance(rng, 50, 4, 1)
    pat = TaperedPattern(locs, 0.1)
    ops = DataCovOps(pat, p, KnotSet(knots, 1), 0.05)
    z = rng.normal(size=50)
    k = np.array([0.37])
    cases = [
        (ops.with_knot_added(k), KnotSet(np.vstack([knots, k]))),
        (ops.with_knot_deleted(1), KnotSet(np.delete(knots, 1, axis=0))),
        (ops.with_knot_moved(2, k), KnotSet(np.vstack([np.delete(knots, 2, axis=0), k]))),
    ]
    for upd, ks in cases:
        fresh = DataCovOps(pat, p, ks, 0.05)
        assert upd.loglik(z) == pytest.approx(fresh.loglik(z), abs=1e-10)
        np.testing.assert_array_equal(upd.knots.locs, ks.locs)
    back = ops.with_knot_added(k).with_knot_deleted(4)
    np.testing.assert_allclose(back.B, ops.B, atol=1e-12)
    np.testing.assert_allclose(back.kp.corr, ops.kp.corr, atol=1e-12)
    np.testing.assert_allclose(back.v_vals, ops.v_vals, atol=1e-12)
    first = DataCovOps(pat, p, KnotSet(np.zeros((0, 1))), 0.05).with_knot_added(k)
    assert first.B.shape == (50, 1)


def test_basis_and_precision_definitions():
    rng = np.random.default_rng(9)
    p, locs, knots = random_instance(rng, 15, 3, 2)
    ks = KnotSet(knots, 2)
    B = basis_matrix(p, locs, ks)
    C = parent_cov_matrix(p, np.vstack([locs, knots]))
    sig_s = np.sqrt(np.diag(C)[:15])
    sig_k = np.sqrt(np.diag(C)[15:])
    np.testing.assert_allclose(B, C[:15, 15:] / sig_k[None, :], rtol=1e-12)
    np.testing.assert_allclose(B / sig_s[:, None], C[:15, 15:] / np.outer(sig_s, sig_k), rtol=1e-12)
    kp = knot_precision(p, ks)
    Rk = C[15:, 15:] / np.outer(sig_k, sig_k)
    np.testing.assert_allclose(kp.chol @ kp.chol.T, Rk, atol=1e-12)


def test_neighbor_pairs_basic():
    I, J, D = neighbor_pairs(np.array([[0.0], [1.0]]), 1.0)
    assert list(zip(I, J)) == [(0, 0), (1, 1)]
    I, J, _ = neighbor_pairs(np.zeros((5, 2)), 0.5)
    assert I.size == 15
    with pytest.raises(ValueError):
        neighbor_pairs(np.zeros((2, 1)), 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 3), st.floats(0.05, 0.6), st.integers(0, 2**31 - 1))
def test_neighbor_pairs_brute_force(n, d, L, seed):
    locs = np.random.default_rng(seed).random((n, d))
    I, J, D = neighbor_pairs(locs, L)
    H = np.sqrt(((locs[:, None] - locs[None]) ** 2).sum(-1))
    bi, bj = np.nonzero(np.triu(H < L))
    assert sorted(zip(I.tolist(), J.tolist())) == sorted(zip(bi.tolist(), bj.tolist()))
    assert list(zip(I, J)) == sorted(zip(I, J))
    np.testing.assert_allclose(D, H[I, J])


def test_sim1_design_sparsity():
    # the observed 275 grid points of a study design
    design = StudyDesign.draw(np.random.default_rng(0))
    pat = TaperedPattern(GRID[design.obs], 6.5)
    assert 2000 <= pat.nnz <= 2800
    row_counts = np.bincount(np.concatenate([pat.I, pat.J[pat.I != pat.J]]), minlength=pat.n)
    assert row_counts.max() <= 13
    assert pat.nnz / pat.n < 9
    # the full 512 grid has 13 entries per interior row
    full = TaperedPattern(GRID, 6.5)
    assert full.nnz == 512 * 13 - 2 * (6 + 5 + 4 + 3 + 2 + 1)


def test_pattern_built_once_per_chain():
    from fsagp.data import Dataset
    from fsagp.sampler import ChainConfig, run_chain

    rng = np.random.default_rng(1)
    locs = np.sort(rng.random(30)) * 10
    data = Dataset(locs, np.sin(locs) + 0.1 * rng.normal(size=30), noise_var=0.01)
    before = fsa.PATTERN_BUILDS
    rec = run_chain(data, default_params(1, 0.0, 0.0), ChainConfig(n_iter=60, n_burn=20, thin=1, taper_length=1.0))
    assert fsa.PATTERN_BUILDS - before == 1
    assert rec.stats["numeric_factorizations"] > 60


def test_build_tapered_v_is_symmetric_sparse():
    rng = np.random.default_rng(10)
    p, locs, knots = random_instance(rng, 40, 3, 2)
    V = build_tapered_v(TaperedPattern(locs, 0.2), p, KnotSet(knots, 2), 0.1)
    assert (V - V.T).count_nonzero() == 0
    assert np.all(np.linalg.eigvalsh(V.toarray()) > 0)
