"""Row groupings for multi-subspace factorization.

``block_assignment`` is the zero-cost contiguous split; ``k_subspaces_em``
alternates nearest-subspace assignment with per-cluster SVD refits to
locally minimize the projective-clustering cost ``projective_cost``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .linalg_core import split_rows

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 50


@dataclass(frozen=True)
class SubspaceSet:
    bases: tuple  # each n x j with orthonormal columns

    @property
    def K(self):
        return len(self.bases)


@dataclass(frozen=True)
class RowAssignment:
    assign: np.ndarray
    K: int

    def __post_init__(self):
        assign = np.asarray(self.assign, dtype=np.int64).copy()
        if assign.ndim != 1:
            raise InvalidArgumentError("assignment must be 1-D")
        if self.K < 1:
            raise InvalidArgumentError("K must be >= 1")
        if assign.size and (assign.min() < 0 or assign.max() >= self.K):
            raise InvalidArgumentError(f"cluster index out of range [0, {self.K})")
        assign.setflags(write=False)
        object.__setattr__(self, "assign", assign)

    def __len__(self):
        return self.assign.size

    def __eq__(self, other):
        if not isinstance(other, RowAssignment):
            return NotImplemented
        return self.K == other.K and np.array_equal(self.assign, other.assign)

    __hash__ = None

    def members(self, k):
        return np.flatnonzero(self.assign == k)

    def sizes(self):
        return np.bincount(self.assign, minlength=self.K)


def block_assignment(m, K):
    assign = np.empty(m, dtype=np.int64)
    for k, (start, end) in enumerate(split_rows(m, K)):
        assign[start:end] = k
    return RowAssignment(assign, K)


def residuals(rows, subspaces):
    """m x K matrix of squared distances from each row to each subspace."""
    rows = np.asarray(rows, dtype=np.float64)
    out = np.empty((rows.shape[0], subspaces.K))
    for k, B in enumerate(subspaces.bases):
        if B.shape[0] != rows.shape[1]:
            raise InvalidArgumentError(f"basis {k} lives in R^{B.shape[0]}, rows in R^{rows.shape[1]}")
        if B.shape[1] > rows.shape[1]:
            raise InvalidArgumentError(f"basis {k} has more columns than the ambient dimension")
        diff = rows - (rows @ B) @ B.T
        out[:, k] = np.einsum("ij,ij->i", diff, diff)
    return out


def projective_cost(rows, subspaces):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise InvalidArgumentError("rows must be a 2-D matrix")
    if subspaces.K == 0:
        raise InvalidArgumentError("need at least one subspace")
    return float(residuals(rows, subspaces).min(axis=1).sum())


def top_right_subspace(rows, j):
    """Orthonormal n x j basis of the top-j right singular subspace of ``rows``.

    Uses the full right factor so clusters with fewer than j rows still get a
    j-dimensional basis.
    """
    _, _, Vt = np.linalg.svd(rows, full_matrices=True)
    return Vt[:j].T.copy()


def _fit(rows, assign, K, j):
    """Refit every cluster's subspace; re-seed empty clusters in place.

    An empty cluster takes the row with the largest residual to its current
    subspace (lowest index on ties) among clusters that can spare a row;
    the donor cluster is then refit. Both moves can only lower the cost.
    """
    bases = [None] * K
    for k in range(K):
        idx = np.flatnonzero(assign == k)
        if idx.size:
            bases[k] = top_right_subspace(rows[idx], j)
    for k in range(K):
        if bases[k] is not None:
            continue
        sizes = np.bincount(assign, minlength=K)
        res = np.full(rows.shape[0], -np.inf)
        for i in range(rows.shape[0]):
            donor = assign[i]
            if sizes[donor] > 1:
                B = bases[donor]
                diff = rows[i] - B @ (B.T @ rows[i])
                res[i] = float(diff @ diff)
        seed = int(np.argmax(res))
        donor = assign[seed]
        assign[seed] = k
        bases[k] = top_right_subspace(rows[seed][None, :], j)
        bases[donor] = top_right_subspace(rows[assign == donor], j)
    return bases


def k_subspaces_em(rows, K, j, init=None, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL):
    """K-subspaces EM.

    Returns ``(assignment, subspaces, cost_trace)`` where ``cost_trace[t]`` is
    the projective cost after the t-th refit. Stops when the assignment is
    stable, the relative decrease drops below ``tol``, or after ``max_iter``
    refits.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise InvalidArgumentError("rows must be a non-empty 2-D matrix")
    m, n = rows.shape
    if not 1 <= K <= m:
        raise InvalidArgumentError(f"need 1 <= K <= {m}, got K={K}")
    if not 1 <= j <= n:
        raise InvalidArgumentError(f"need 1 <= j <= {n}, got j={j}")
    if max_iter < 1 or tol < 0:
        raise InvalidArgumentError("max_iter must be >= 1 and tol >= 0")
    if init is None:
        init = block_assignment(m, K)
    if len(init) != m or init.K != K:
        raise InvalidArgumentError("initial assignment does not match rows/K")

    assign = np.array(init.assign)
    trace = []
    for _ in range(max_iter):
        bases = _fit(rows, assign, K, j)
        dist = residuals(rows, SubspaceSet(tuple(bases)))
        cost = float(dist.min(axis=1).sum())
        trace.append(cost)
        new_assign = np.argmin(dist, axis=1)  # ties -> lowest index
        stable = np.array_equal(new_assign, assign)
        small = len(trace) > 1 and (trace[-2] - cost) <= tol * trace[-2]
        assign = new_assign
        if stable or small or cost == 0.0:
            break
    # the labels are nearest-subspace labels for the returned bases, so their
    # cost is exactly trace[-1]
    return RowAssignment(assign, K), SubspaceSet(tuple(bases)), trace
