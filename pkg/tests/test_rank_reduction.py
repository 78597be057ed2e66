import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bundle_of
from cluster_laser.errors import InvalidArgumentError, PlanError
from cluster_laser.linalg_core import thin_svd, truncate
from cluster_laser.rank_reduction import (
    CompressionPlan,
    apply_plan,
    compress,
    compress_blockwise,
    compress_clustered,
    plan_for,
    rank_from_rho,
)
from cluster_laser.subspace_partition import RowAssignment, block_assignment


def numeric_rank(A, rel=1e-8):
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > rel * s[0])) if s.size and s[0] > 0 else 0


@pytest.mark.parametrize(
    "rows, cols, rho, j",
    [(4096, 4096, 0.005, 20), (7, 9, 1.0, 7), (3, 100, 0.01, 1), (10, 10, 0.34, 3)],
)
def test_rank_from_rho(rows, cols, rho, j):
    assert rank_from_rho(rows, cols, rho) == j


def test_rank_from_rho_rejects_bad_rho():
    with pytest.raises(InvalidArgumentError):
        rank_from_rho(4, 4, 0.0)


def test_full_rho_is_identity(rng):
    W = rng.standard_normal((9, 5))
    for K in (1, 2, 3):
        assert np.linalg.norm(compress_blockwise(W, K, 1.0) - W) <= 1e-8 * np.linalg.norm(W)


def test_single_block_is_plain_truncation(rng):
    W = rng.standard_normal((8, 6))
    np.testing.assert_array_equal(compress_blockwise(W, 1, 0.5), truncate(thin_svd(W), 3))


def test_blocks_12x6(rng):
    W = rng.standard_normal((12, 6))
    out = compress_blockwise(W, 3, 0.34)
    j = rank_from_rho(4, 6, 0.34)  # floor(0.34 * 4) = 1; the block's own min dimension is 4
    assert j == 1
    for s in (0, 4, 8):
        block, approx = W[s:s + 4], out[s:s + 4]
        assert numeric_rank(approx) <= j
        err = np.linalg.norm(block - approx)
        for _ in range(200):
            Q, _ = np.linalg.qr(rng.standard_normal((4, j)))
            assert err <= np.linalg.norm(block - Q @ (Q.T @ block)) + 1e-12


def test_blocks_rank_two(rng):
    W = rng.standard_normal((12, 6))
    out = compress_blockwise(W, 3, 0.5)
    assert [numeric_rank(out[s:s + 4]) for s in (0, 4, 8)] == [2, 2, 2]


def test_clustered_matches_blockwise(rng):
    W = rng.standard_normal((11, 7))
    for K in (1, 2, 3, 5):
        np.testing.assert_allclose(
            compress_clustered(W, block_assignment(11, K), 0.4), compress_blockwise(W, K, 0.4), atol=1e-12
        )


def test_clustered_single_cluster(rng):
    W = rng.standard_normal((6, 6))
    np.testing.assert_allclose(compress_clustered(W, RowAssignment(np.zeros(6), 1), 0.5), truncate(thin_svd(W), 3))


def test_clustered_two_lines_exact(rng):
    a = np.outer(rng.uniform(1, 2, 5), [1.0, 2.0, 0, 0])
    b = np.outer(rng.uniform(1, 2, 5), [0, 0, 3.0, -1.0])
    W = np.empty((10, 4))
    W[0::2], W[1::2] = a, b
    out = compress_clustered(W, RowAssignment(np.tile([0, 1], 5), 2), 0.2)
    assert np.linalg.norm(W - out) <= 1e-10


def test_clustered_skips_empty_and_checks_length(rng):
    W = rng.standard_normal((4, 3))
    out = compress_clustered(W, RowAssignment([0, 0, 2, 2], 3), 0.5)
    assert out.shape == W.shape
    with pytest.raises(InvalidArgumentError):
        compress_clustered(W, RowAssignment([0, 0, 1], 2), 0.5)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 16), n=st.integers(2, 16), K=st.integers(1, 4))
def test_shape_rank_and_monotone_error(seed, m, n, K):
    K = min(K, m)
    W = np.random.default_rng(seed).standard_normal((m, n))
    errors = []
    for rho in sorted((0.9, 0.8, 0.6, 0.4, 0.2, 0.1, 0.05), reverse=True):
        out = compress_blockwise(W, K, rho)
        assert out.shape == W.shape
        errors.append(np.linalg.norm(W - out))
    assert all(a <= b + 1e-12 for a, b in zip(errors, errors[1:]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mode=st.sampled_from(["block", "em_cluster"]))
def test_idempotence(seed, mode):
    W = np.random.default_rng(seed).standard_normal((10, 6))
    once = compress(W, 2, 0.4, mode)
    twice = compress(once, 2, 0.4, mode)
    assert np.linalg.norm(twice - once) <= 1e-8 * max(np.linalg.norm(once), 1e-300)


def _bundle(rng):
    return bundle_of({(layer, kind): (rng.standard_normal((8, 6)), None) for layer in range(12) for kind in ("mlp_in", "mlp_out")})


def test_baseline_plan_is_bit_identical(rng):
    b = _bundle(rng)
    out = apply_plan(b, plan_for(b, "L3.mlp_in", 1.0, 4))
    assert all(x == y for x, y in zip(out, b))
    assert apply_plan(b, CompressionPlan()).records == b.records


def test_only_target_changes(rng):
    b = _bundle(rng)
    plan = plan_for(b, "L11.mlp_in", 0.005, 2)
    out = apply_plan(b, plan)
    changed = [x.id for x, y in zip(out, b) if not x == y]
    assert changed == ["L11.mlp_in"]
    assert out.history == (plan,) and b.history == ()
    assert plan.as_tuple() == ["mlp_in", 11, 0.005, 2]


def test_unknown_target(rng):
    b = _bundle(rng)
    with pytest.raises(PlanError, match="unknown matrix id"):
        apply_plan(b, CompressionPlan(matrix_id="nope", rho=0.5))
    with pytest.raises(PlanError):
        apply_plan(b, CompressionPlan(matrix_id=None, rho=0.5))


def test_plan_validation():
    with pytest.raises(InvalidArgumentError):
        CompressionPlan(rho=1.5)
    with pytest.raises(InvalidArgumentError):
        CompressionPlan(K=0)
    with pytest.raises(InvalidArgumentError):
        CompressionPlan(mode="random")
    assert CompressionPlan().as_tuple() == [None, None, 1.0, 1]
