"""Multi-subspace low-rank compression of weight matrices."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, PlanError
from .linalg_core import split_rows, stack_rows, thin_svd, truncate
from .subspace_partition import block_assignment, k_subspaces_em

MODES = ("block", "em_cluster")


@dataclass(frozen=True)
class CompressionPlan:
    """One intervention: keep a ``rho`` fraction of each group's rank, with
    rows grouped into ``K`` blocks (``mode="block"``) or EM clusters.

    ``matrix_id=None`` with ``rho=1.0`` is the untouched baseline.
    """

    matrix_id: str = None
    rho: float = 1.0
    K: int = 1
    mode: str = "block"
    layer: int = None
    kind: str = None
    score: float = None

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise InvalidArgumentError(f"rho must lie in (0, 1], got {self.rho}")
        if int(self.K) != self.K or self.K < 1:
            raise InvalidArgumentError(f"K must be a positive integer, got {self.K}")
        if self.mode not in MODES:
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")

    @property
    def is_baseline(self):
        return self.rho == 1.0

    def as_tuple(self):
        """``[tau, layer, rho, K]`` in the style of reported parameter tables."""
        if self.matrix_id is None:
            return [None, None, self.rho, self.K]
        return [self.kind, self.layer, self.rho, self.K]

    def key(self):
        return (self.layer, self.kind, self.rho, self.K, self.mode)


def rank_from_rho(rows_k, cols, rho):
    if not 0.0 < rho <= 1.0:
        raise InvalidArgumentError(f"rho must lie in (0, 1], got {rho}")
    return max(1, math.floor(rho * min(rows_k, cols)))


def compress_blockwise(W, K, rho):
    W = np.asarray(W, dtype=np.float64)
    blocks = []
    for start, end in split_rows(W.shape[0], K):
        block = W[start:end]
        j = rank_from_rho(block.shape[0], block.shape[1], rho)
        blocks.append(truncate(thin_svd(block), j))
    return stack_rows(blocks)


def compress_clustered(W, assignment, rho):
    """Truncate each cluster's rows separately and scatter them back in place."""
    W = np.asarray(W, dtype=np.float64)
    assign = np.asarray(assignment.assign)
    if assign.shape != (W.shape[0],):
        raise InvalidArgumentError(f"assignment covers {assign.size} rows, matrix has {W.shape[0]}")
    out = np.empty_like(W)
    for k in range(assignment.K):
        idx = np.flatnonzero(assign == k)
        if idx.size == 0:
            continue
        rows = W[idx]
        j = rank_from_rho(rows.shape[0], rows.shape[1], rho)
        out[idx] = truncate(thin_svd(rows), j)
    return out


def em_assignment(W, K, rho, **em_kwargs):
    """Row clusters from K-subspaces EM, initialised with the block split.

    The subspace dimension is the rank the first (largest) block would keep
    at ``rho``.
    """
    W = np.asarray(W, dtype=np.float64)
    first = split_rows(W.shape[0], K)[0]
    j = rank_from_rho(first[1] - first[0], W.shape[1], rho)
    return k_subspaces_em(W, K, j, init=block_assignment(W.shape[0], K), **em_kwargs)


def compress(W, K, rho, mode="block"):
    if mode == "block":
        return compress_blockwise(W, K, rho)
    if mode == "em_cluster":
        assignment, _, _ = em_assignment(W, K, rho)
        return compress_clustered(W, assignment, rho)
    raise InvalidArgumentError(f"unknown mode {mode!r}")


def apply_plan(bundle, plan):
    """Return a new bundle with the plan's target replaced by its compression.

    Baseline plans (``rho == 1``) skip the SVD entirely, so payloads stay
    bit-identical.
    """
    if plan.matrix_id is None:
        if not plan.is_baseline:
            raise PlanError("a plan without a target matrix must have rho=1.0")
        return bundle.with_history(plan)
    try:
        rec = bundle.get(plan.matrix_id)
    except KeyError:
        raise PlanError(f"unknown matrix id {plan.matrix_id!r}") from None
    if rec.role != "weight":
        raise PlanError(f"{plan.matrix_id!r} is not a weight record")
    if plan.is_baseline:
        return bundle.with_history(plan)
    new = compress(rec.data, plan.K, plan.rho, plan.mode)
    return bundle.replace_data(rec.id, new, plan=plan)


def plan_for(bundle, matrix_id, rho, K, mode="block", score=None):
    rec = bundle.get(matrix_id)
    return CompressionPlan(matrix_id=matrix_id, rho=rho, K=K, mode=mode, layer=rec.layer, kind=rec.kind, score=score)
