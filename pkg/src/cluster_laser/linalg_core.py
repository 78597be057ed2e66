"""Thin SVD, rank truncation and contiguous row-block split/stack."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericError


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``W = U @ diag(sigma) @ V.T`` keeping only the numerical rank.

    ``U`` is m x r and ``V`` is n x r, so the original shape is recoverable
    even when r == 0.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def r(self):
        return self.sigma.shape[0]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def reconstruct(self):
        return (self.U * self.sigma) @ self.V.T


def _as_matrix(W):
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or min(W.shape) < 1:
        raise InvalidArgumentError(f"expected a non-empty 2-D matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise InvalidArgumentError("matrix contains non-finite entries")
    return W


def numerical_rank(sigma, shape):
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    tol = max(shape) * np.finfo(np.float64).eps * sigma[0]
    return int(np.count_nonzero(sigma > tol))


def thin_svd(W):
    W = _as_matrix(W)
    m, n = W.shape
    try:
        U, s, Vt = np.linalg.svd(W, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    r = numerical_rank(s, W.shape)
    U = U[:, :r].copy()
    V = Vt[:r].T.copy()
    s = s[:r].copy()
    # sign convention: largest-|.| entry of each left vector is non-negative
    if r:
        pivots = np.argmax(np.abs(U), axis=0)
        signs = np.where(U[pivots, np.arange(r)] < 0, -1.0, 1.0)
        U *= signs
        V *= signs
    return SvdFactors(U=U, sigma=s, V=V)


def truncate(factors, j):
    """Dense reconstruction keeping only the ``j`` largest singular values."""
    if int(j) != j or j < 1:
        raise InvalidArgumentError(f"rank must be a positive integer, got {j!r}")
    k = min(int(j), factors.r)
    return (factors.U[:, :k] * factors.sigma[:k]) @ factors.V[:, :k].T


def split_rows(m, K):
    """Balanced contiguous row ranges; the first ``m % K`` blocks get one extra row."""
    if int(K) != K or int(m) != m or K < 1 or m < 1:
        raise InvalidArgumentError(f"m and K must be positive integers, got m={m!r}, K={K!r}")
    if K > m:
        raise InvalidArgumentError(f"cannot split {m} rows into {K} blocks")
    base, extra = divmod(int(m), int(K))
    ranges = []
    start = 0
    for k in range(int(K)):
        end = start + base + (1 if k < extra else 0)
        ranges.append((start, end))
        start = end
    return ranges


def stack_rows(blocks):
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    if not blocks:
        raise InvalidArgumentError("nothing to stack")
    cols = {b.shape[1] for b in blocks}
    if len(cols) != 1:
        raise InvalidArgumentError(f"blocks disagree on column count: {sorted(cols)}")
    return np.vstack(blocks)
