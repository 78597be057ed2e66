"""Gradient-guided search over compression plans.

``run_search`` samples a calibration subset, accumulates loss gradients,
ranks matrices by singular-value-gradient score, evaluates the small grid of
(matrix, rho, K) arms that survive and keeps the best one on the validation
split. Exhaustive methods skip the ranking and evaluate every matrix.
"""

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import cost_model
from .errors import BundleError, CapabilityError, InvalidArgumentError, LaserError
from .rank_reduction import MODES, CompressionPlan, apply_plan, plan_for
from .sv_gradient import DEFAULT_WINDOW, rank_matrices
from .tensor_store import KINDS, kind_order


class EvaluationError(LaserError, RuntimeError):
    """An evaluator call failed; the message names the arm being evaluated."""


@dataclass(frozen=True)
class SearchSpace:
    layers: tuple
    kinds: tuple
    rhos: tuple
    cluster_levels: tuple
    include_baseline: bool = True
    mode: str = "block"

    def __post_init__(self):
        for name in ("layers", "kinds", "rhos", "cluster_levels"):
            value = tuple(getattr(self, name))
            if not value:
                raise InvalidArgumentError(f"search space {name} must be non-empty")
            object.__setattr__(self, name, value)
        if not all(0.0 < r < 1.0 for r in self.rhos):
            raise InvalidArgumentError("every rho in the grid must lie in (0, 1); the baseline is added separately")
        if not all(int(k) == k and k >= 1 for k in self.cluster_levels):
            raise InvalidArgumentError("cluster levels must be positive integers")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise InvalidArgumentError(f"unknown matrix kinds {bad}")
        if self.mode not in MODES:
            raise InvalidArgumentError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class SearchConfig:
    method: str
    q: int = 5
    w: int = DEFAULT_WINDOW
    calib_n: int = cost_model.CALIB_N
    seed: int = 0
    validation_fraction: float = cost_model.VALIDATION_FRACTION
    test_fraction: float = cost_model.TEST_FRACTION

    def __post_init__(self):
        cost_model.method_spec(self.method)
        if self.q < 1 or self.w < 1 or self.calib_n < 1:
            raise InvalidArgumentError("q, w and calib_n must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        vf, tf = self.validation_fraction, self.test_fraction
        if vf <= 0 or tf <= 0 or vf + tf > 1 + 1e-12:
            raise InvalidArgumentError("fractions must be positive with validation + test <= 1")

    @property
    def spec(self):
        return cost_model.method_spec(self.method)


@dataclass(frozen=True)
class EvaluatorBinding:
    """An evaluator plus the size ``d`` of its example pool (ids ``0..d-1``).

    The validation split is the first ``floor(validation_fraction * d)`` ids,
    the test split the next ``floor(test_fraction * d)``.
    """

    evaluator: object
    d: int
    validation_fraction: float = cost_model.VALIDATION_FRACTION
    test_fraction: float = cost_model.TEST_FRACTION

    def __post_init__(self):
        if self.d < 1:
            raise InvalidArgumentError("dataset size d must be >= 1")
        if self.validation_size < 1 or self.test_size < 1:
            raise InvalidArgumentError(f"d={self.d} leaves an empty validation or test split")

    @property
    def validation_size(self):
        return math.floor(self.validation_fraction * self.d + 1e-9)

    @property
    def test_size(self):
        return math.floor(self.test_fraction * self.d + 1e-9)

    def validation_ids(self):
        return list(range(self.validation_size))

    def test_ids(self):
        v = self.validation_size
        return list(range(v, v + self.test_size))


@dataclass(frozen=True)
class SearchOutcome:
    best_plan: CompressionPlan
    validation_accuracy: float
    test_accuracy: float
    candidates_evaluated: int
    forward_pass_equivalents: float
    ranked_matrices: list
    arms: list = field(default_factory=list)  # (plan, validation accuracy) in evaluation order
    selection_examples: int = 0  # distinct example ids evaluated before the test pass

    def as_dict(self):
        return {
            "best_plan": self.best_plan.as_tuple(),
            "best_matrix_id": self.best_plan.matrix_id,
            "validation_accuracy": self.validation_accuracy,
            "test_accuracy": self.test_accuracy,
            "candidates_evaluated": self.candidates_evaluated,
            "forward_pass_equivalents": self.forward_pass_equivalents,
            "ranked_matrices": [[mid, score] for mid, score in self.ranked_matrices],
            "selection_examples": self.selection_examples,
        }


def sample_calibration(split, n, seed):
    """``n`` ids drawn uniformly without replacement, returned sorted."""
    split = list(split)
    if not 1 <= n <= len(split):
        raise InvalidArgumentError(f"cannot sample {n} examples from a split of {len(split)}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(split), size=n, replace=False)
    return sorted(split[i] for i in picks)


def accumulate_gradients(evaluator, bundle, example_ids):
    """Summed per-example loss gradients, keyed by weight id.

    Examples are visited in ascending id order (duplicates count twice) so
    the floating-point sum is reproducible.
    """
    if not getattr(evaluator, "supports_gradients", False):
        raise CapabilityError(f"{type(evaluator).__name__} does not provide loss gradients")
    total = {}
    for i in sorted(example_ids):
        for wid, G in evaluator.example_gradients(bundle, i).items():
            G = np.asarray(G, dtype=np.float64)
            total[wid] = total[wid] + G if wid in total else G.copy()
    return total


def _arm_key(plan, acc):
    layer = -1 if plan.layer is None else plan.layer
    kind = -1 if plan.kind is None else kind_order(plan.kind)
    return (-acc, -plan.rho, plan.K, layer, kind)


def _evaluate(evaluator, bundle, plan, ids):
    try:
        correct, total = evaluator.evaluate(apply_plan(bundle, plan), ids)
    except LaserError:
        raise
    except Exception as exc:
        raise EvaluationError(f"evaluator failed on arm {plan.as_tuple()} ({plan.matrix_id}): {exc}") from exc
    if total < 1 or not 0 <= correct <= total:
        raise EvaluationError(f"evaluator returned {correct}/{total} for arm {plan.as_tuple()}")
    return correct / total


def _candidate_weights(bundle, space):
    found = [w for w in bundle.weights() if w.layer in space.layers and w.kind in space.kinds]
    found.sort(key=lambda w: (w.layer, kind_order(w.kind)))
    return found


def _gradient_bundle(bundle, binding, candidates, grad_ids):
    evaluator = binding.evaluator
    if getattr(evaluator, "supports_gradients", False):
        grads = accumulate_gradients(evaluator, bundle, grad_ids)
        return bundle.with_gradients({w.id: grads[w.id] for w in candidates})
    # gradient-free evaluators can still rank from gradients stored in the bundle
    if all(bundle.gradient_for(w) is not None for w in candidates):
        return bundle
    raise CapabilityError(
        f"{type(evaluator).__name__} does not provide loss gradients and the bundle has no gradient records"
    )


def run_search(bundle, space, config, binding):
    spec = config.spec
    if (config.validation_fraction, config.test_fraction) != (binding.validation_fraction, binding.test_fraction):
        raise InvalidArgumentError("config and binding disagree on the validation/test fractions")
    validation = binding.validation_ids()
    test = binding.test_ids()
    levels = tuple(space.cluster_levels) if spec.clustered else (1,)
    candidates = _candidate_weights(bundle, space)
    if not candidates:
        raise InvalidArgumentError("no weight records match the search space")

    calib = None
    if spec.gradients == "calib" or spec.evaluation == "calib":
        calib = sample_calibration(validation, config.calib_n, config.seed)
    grad_ids = []
    if spec.exhaustive:
        ranked = []
        targets = [w.id for w in candidates]
    else:
        grad_ids = validation if spec.gradients == "validation" else calib
        scored = _gradient_bundle(bundle, binding, candidates, grad_ids)
        ranked = rank_matrices(scored, K=list(levels), window=config.w, q=config.q, kinds=space.kinds, layers=space.layers)
        targets = [mid for mid, _ in ranked]
    eval_ids = validation if spec.evaluation == "validation" else calib

    plans = [plan_for(bundle, mid, rho, K, mode=space.mode) for mid in targets for rho in space.rhos for K in levels]
    if space.include_baseline:
        plans.insert(0, CompressionPlan())
    if not plans:
        raise InvalidArgumentError("empty candidate set")
    arms = [(plan, _evaluate(binding.evaluator, bundle, plan, eval_ids)) for plan in plans]
    best, best_acc = min(arms, key=lambda pa: _arm_key(*pa))
    test_acc = _evaluate(binding.evaluator, bundle, best, test)

    compressed = sum(1 for p, _ in arms if not p.is_baseline)
    fpe = cost_model.search_cost(
        arms=compressed,
        eval_size=len(eval_ids),
        test_size=len(test),
        grad_examples=len(grad_ids),
        grad_levels=len(levels) if spec.clustered else 1,
    )
    return SearchOutcome(
        best_plan=best,
        validation_accuracy=best_acc,
        test_accuracy=test_acc,
        candidates_evaluated=len(arms),
        forward_pass_equivalents=fpe,
        ranked_matrices=ranked,
        arms=arms,
        selection_examples=len(set(eval_ids)),
    )


def preset_space(model, method):
    """Search space and default config matching a published model preset."""
    levels = cost_model.cluster_levels(method, model)
    space = SearchSpace(
        layers=tuple(range(cost_model.PRESET_LAYERS[model])),
        kinds=("mlp_in", "mlp_out"),
        rhos=cost_model.RHO_GRID,
        cluster_levels=levels,
    )
    # exhaustive methods never rank, so q only matters as a default
    q = cost_model.top_choices(method, model) or 5
    return space, SearchConfig(method=method, q=q)


class ReplayEvaluator:
    """Lookup-table accuracy oracle keyed by the last applied plan.

    ``table`` maps ``(kind, layer, rho, K)`` tuples (``(None, None, 1.0, 1)``
    for the baseline) to accuracies in [0, 1]; unlisted plans score
    ``default``. The correct count is the accuracy times the number of ids,
    rounded to the nearest integer.
    """

    supports_gradients = False

    def __init__(self, table, default=0.0):
        self.table = {self._key(k): float(v) for k, v in table.items()}
        self.default = float(default)
        for acc in (*self.table.values(), self.default):
            if not 0.0 <= acc <= 1.0:
                raise InvalidArgumentError(f"replay accuracy {acc} outside [0, 1]")

    @staticmethod
    def _key(k):
        kind, layer, rho, K = k
        return (kind, None if layer is None else int(layer), float(rho), int(K))

    def accuracy_for(self, plan):
        return self.table.get(self._key(plan.as_tuple()), self.default)

    def evaluate(self, bundle, example_ids):
        plan = bundle.history[-1] if bundle.history else CompressionPlan()
        total = len(example_ids)
        return int(round(self.accuracy_for(plan) * total)), total

    def example_gradients(self, bundle, example_id):
        raise CapabilityError("replay evaluator has no loss gradients")


def reported_plans():
    """Published winning ``[kind, layer, rho, K]`` tuples keyed by method, preset and dataset."""
    text = resources.files(__package__).joinpath("data/reported_plans.json").read_text()
    return json.loads(text)["plans"]


def plan_from_tuple(bundle, entry, mode="block"):
    """Inverse of ``CompressionPlan.as_tuple`` for a bundle containing the target."""
    kind, layer, rho, K = entry
    if kind is None:
        return CompressionPlan(rho=rho, K=K)
    rec = bundle.find(int(layer), kind)
    if rec is None:
        raise BundleError(f"bundle has no {kind} weight for layer {layer}")
    return plan_for(bundle, rec.id, rho, K, mode=mode)
