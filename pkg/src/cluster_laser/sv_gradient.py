"""Singular-value gradients and gradient-based matrix scoring.

For ``W = sum_i sigma_i u_i v_i^T`` and a loss gradient ``G = dL/dW`` the
derivative with respect to each singular value is ``u_i^T G v_i``. A matrix
is scored by how negative those derivatives are over the smallest-sigma tail
of each row block.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import BundleError, InvalidArgumentError
from .linalg_core import split_rows, thin_svd
from .tensor_store import kind_order

DEFAULT_WINDOW = 20
DEGENERATE_GAP = 1e-8


class DegenerateSpectrumWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ScoreReport:
    matrix_id: str
    per_block: list
    score: float
    window: int
    clusters: int
    degenerate_spectrum: bool = False
    block_scores: list = field(default_factory=list)

    def as_dict(self):
        return {
            "matrix_id": self.matrix_id,
            "score": self.score,
            "window": self.window,
            "clusters": self.clusters,
            "degenerate_spectrum": self.degenerate_spectrum,
            "block_scores": list(self.block_scores),
            "per_block": [g.tolist() for g in self.per_block],
        }


def _check_pair(W, G):
    W = np.asarray(W, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if W.shape != G.shape:
        raise InvalidArgumentError(f"weight {W.shape} and gradient {G.shape} shapes differ")
    if not np.all(np.isfinite(G)):
        raise InvalidArgumentError("gradient contains non-finite entries")
    return W, G


def gradients_from_factors(factors, G):
    return np.einsum("ir,ij,jr->r", factors.U, G, factors.V)


def singular_value_gradients(W, G):
    """``g[i] = u_i^T G v_i`` in descending-sigma order (length = numerical rank)."""
    W, G = _check_pair(W, G)
    return gradients_from_factors(thin_svd(W), G)


def _is_degenerate(sigma):
    if sigma.size < 2:
        return False
    return float(np.min(-np.diff(sigma))) < DEGENERATE_GAP * sigma[0]


def tail_penalty(g, window):
    """Negated sum of the negative parts of the last ``min(window, len(g))`` entries."""
    if g.size == 0:
        return 0.0
    tail = g[-min(window, g.size):]
    return float(-np.minimum(tail, 0.0).sum())


def matrix_score(W, G, K=1, window=DEFAULT_WINDOW, matrix_id=""):
    W, G = _check_pair(W, G)
    if window < 1:
        raise InvalidArgumentError(f"window must be >= 1, got {window}")
    if K > W.shape[0]:
        raise InvalidArgumentError(f"K={K} exceeds the {W.shape[0]} rows of {matrix_id or 'matrix'}")
    per_block = []
    block_scores = []
    degenerate = False
    for start, end in split_rows(W.shape[0], K):
        factors = thin_svd(W[start:end])
        degenerate = degenerate or _is_degenerate(factors.sigma)
        g = gradients_from_factors(factors, G[start:end])
        per_block.append(g)
        block_scores.append(tail_penalty(g, window))
    if degenerate:
        warnings.warn(f"repeated singular values in {matrix_id or 'matrix'}", DegenerateSpectrumWarning, stacklevel=2)
    score = sum(block_scores) / K
    return ScoreReport(
        matrix_id=matrix_id,
        per_block=per_block,
        score=score,
        window=window,
        clusters=K,
        degenerate_spectrum=degenerate,
        block_scores=block_scores,
    )


def rank_matrices(bundle, K=1, window=DEFAULT_WINDOW, q=5, kinds=("mlp_in", "mlp_out"), layers=None):
    """Top-``q`` weight records by score, as ``(matrix_id, score)`` pairs.

    ``K`` may be a sequence of cluster levels, in which case a matrix's score
    is the mean of its per-level scores. Ties go to the lower layer, then to
    the earlier kind.
    """
    levels = [K] if np.isscalar(K) else list(K)
    if q < 1:
        raise InvalidArgumentError("q must be >= 1")
    scored = []
    for weight in bundle.weights():
        if weight.kind not in kinds or (layers is not None and weight.layer not in layers):
            continue
        grad = bundle.gradient_for(weight)
        if grad is None:
            raise BundleError(f"missing gradient for layer {weight.layer} {weight.kind} ({weight.id})")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateSpectrumWarning)
            score = float(np.mean([matrix_score(weight.data, grad.data, k, window).score for k in levels]))
        scored.append((weight, score))
    scored.sort(key=lambda ws: (-ws[1], ws[0].layer, kind_order(ws[0].kind)))
    return [(w.id, s) for w, s in scored[:q]]


def correlation_report(W, G):
    """Pearson r and Spearman rho between singular values and their gradients."""
    W, G = _check_pair(W, G)
    factors = thin_svd(W)
    if factors.r < 3:
        raise InvalidArgumentError(f"need effective rank >= 3, got {factors.r}")
    return correlation_of(factors.sigma, gradients_from_factors(factors, G))


def correlation_of(sigma, g):
    sigma = np.asarray(sigma, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if np.ptp(sigma) == 0.0 or np.ptp(g) == 0.0:
        raise InvalidArgumentError("correlation undefined: zero variance")
    pearson = float(stats.pearsonr(sigma, g)[0])
    spearman = float(stats.spearmanr(sigma, g)[0])
    return pearson, spearman
