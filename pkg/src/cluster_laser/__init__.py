"""Gradient-guided, multi-subspace low-rank reduction of weight matrices."""

__version__ = "0.1.0"

from .errors import (
    BundleError,
    CapabilityError,
    FormatError,
    InvalidArgumentError,
    LaserError,
    NumericError,
    PlanError,
)
from .linalg_core import SvdFactors, thin_svd, truncate
from .rank_reduction import CompressionPlan, apply_plan, compress, compress_blockwise, compress_clustered
from .search import SearchConfig, SearchSpace, run_search
from .sv_gradient import matrix_score, rank_matrices, singular_value_gradients
from .tensor_store import MatrixRecord, ModelBundle, load_bundle, read_matrix, save_bundle, write_matrix
