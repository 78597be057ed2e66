"""Search cost in forward-pass-equivalents.

Every search method costs ``a * d + b`` forward passes for a dataset of
size ``d``: gradient passes (each worth ``BACKWARD_FACTOR`` forward passes),
one evaluation pass per compressed arm, one for the uncompressed baseline and
a final pass over the test split.
"""

from dataclasses import dataclass

from .errors import InvalidArgumentError

BACKWARD_FACTOR = 2.5
VALIDATION_FRACTION = 0.2
TEST_FRACTION = 0.8
CALIB_N = 100
KINDS_PER_LAYER = 2
RHO_GRID = (0.9, 0.8, 0.6, 0.4, 0.2, 0.1, 0.05, 0.01, 0.005)
ALL_CLUSTER_LEVELS = (1, 2, 4, 8, 16)

PRESET_LAYERS = {"gptj": 28, "roberta": 12}

DATASET_SIZES = {
    "CounterFact": 65757,
    "HotPotQA": 14618,
    "FEVER": 13086,
    "Bios Gender": 39642,
    "Bios Profession": 19223,
    "TruthfulQA": 5882,
    "BigBench-Epistemic Reasoning": 2000,
    "BigBench-WikidataQA": 20321,
}


@dataclass(frozen=True)
class MethodSpec:
    """How a search method spends forward passes.

    ``gradients``: None, "validation" or "calib"; ``evaluation``:
    "validation" or "calib"; ``clustered``: whether K ranges over cluster
    levels; ``exhaustive``: every candidate matrix is evaluated (no ranking).
    """

    name: str
    gradients: str
    evaluation: str
    clustered: bool
    exhaustive: bool


METHODS = {
    m.name: m
    for m in (
        MethodSpec("laser_full", None, "validation", False, True),
        MethodSpec("laser_grads_std", "validation", "validation", False, False),
        MethodSpec("laser_100eval", None, "calib", False, True),
        MethodSpec("laser_100g_std", "calib", "validation", False, False),
        MethodSpec("laser_100g_100e", "calib", "calib", False, False),
        MethodSpec("cl_full", None, "validation", True, True),
        MethodSpec("cl_100g_std", "calib", "validation", True, False),
        MethodSpec("cl_100g_100e", "calib", "calib", True, False),
    )
}
PRESETS = tuple(PRESET_LAYERS)


def method_spec(method):
    try:
        return METHODS[method]
    except KeyError:
        raise InvalidArgumentError(f"unknown method {method!r}; expected one of {sorted(METHODS)}") from None


def cluster_levels(method, preset):
    spec = method_spec(method)
    _check_preset(preset)
    if not spec.clustered:
        return (1,)
    if spec.exhaustive:
        return ALL_CLUSTER_LEVELS
    return (2, 4, 8, 16) if preset == "gptj" else (1, 2, 4, 8)


def top_choices(method, preset):
    """Number of gradient-ranked matrices kept (0 for exhaustive methods)."""
    spec = method_spec(method)
    _check_preset(preset)
    if spec.exhaustive:
        return 0
    if method == "cl_100g_std" or (method == "cl_100g_100e" and preset == "roberta"):
        return 7
    return 5


def _check_preset(preset):
    if preset not in PRESET_LAYERS:
        raise InvalidArgumentError(f"unknown preset {preset!r}; expected one of {list(PRESET_LAYERS)}")


def search_cost(*, arms, eval_size, test_size, grad_examples=0, grad_levels=1):
    """Forward-pass-equivalents of one search.

    ``arms`` counts compressed candidates only; the baseline adds one more
    ``eval_size`` pass.
    """
    return BACKWARD_FACTOR * grad_examples * grad_levels + arms * eval_size + eval_size + test_size


def factored_terms(method, preset, d):
    """Keyword arguments of ``search_cost`` for a preset-sized search."""
    spec = method_spec(method)
    levels = cluster_levels(method, preset)
    validation = VALIDATION_FRACTION * d
    if spec.exhaustive:
        arms = PRESET_LAYERS[preset] * KINDS_PER_LAYER * len(RHO_GRID) * len(levels)
    else:
        arms = top_choices(method, preset) * len(RHO_GRID) * len(levels)
    grad_examples = {None: 0, "validation": validation, "calib": CALIB_N}[spec.gradients]
    return {
        "arms": arms,
        "eval_size": validation if spec.evaluation == "validation" else CALIB_N,
        "test_size": TEST_FRACTION * d,
        "grad_examples": grad_examples,
        "grad_levels": len(levels) if spec.clustered else 1,
    }


def factored_cost(method, preset, d):
    return search_cost(**factored_terms(method, preset, d))


# simplified (slope, intercept) pairs; (method, None) applies to every preset
_AFFINE = {
    ("laser_full", "gptj"): (101.8, 0.0),
    ("laser_full", "roberta"): (44.2, 0.0),
    ("laser_grads_std", None): (10.5, 0.0),
    ("laser_100eval", "gptj"): (0.8, 50500.0),
    ("laser_100eval", "roberta"): (0.8, 21700.0),
    ("laser_100g_std", None): (10.0, 250.0),
    ("laser_100g_100e", None): (0.8, 4850.0),
    ("cl_full", "gptj"): (505.0, 0.0),
    ("cl_full", "roberta"): (217.0, 0.0),
    ("cl_100g_std", None): (51.4, 1000.0),
    ("cl_100g_100e", "gptj"): (0.8, 19100.0),
    ("cl_100g_100e", "roberta"): (0.8, 26300.0),
}


@dataclass(frozen=True)
class CostFormula:
    method: str
    preset: str
    slope: float
    intercept: float

    def __call__(self, d):
        return self.slope * d + self.intercept

    def __str__(self):
        if self.intercept == 0:
            return f"{self.slope:g}d"
        return f"{self.intercept:g} + {self.slope:g}d"


def formula(method, preset):
    method_spec(method)
    _check_preset(preset)
    pair = _AFFINE.get((method, preset)) or _AFFINE.get((method, None))
    if pair is None:
        raise InvalidArgumentError(f"no cost formula for {method!r} on {preset!r}")
    return CostFormula(method, preset, *pair)


def cost(method, preset, d):
    if d < 1:
        raise InvalidArgumentError(f"dataset size must be >= 1, got {d}")
    return formula(method, preset)(d)


def speedup(method, preset, d):
    return cost("laser_full", preset, d) / cost(method, preset, d)


def speedup_table(method, preset, sizes=None):
    """Per-dataset speedups (unrounded) and their arithmetic mean."""
    sizes = DATASET_SIZES if sizes is None else sizes
    rows = [(name, speedup(method, preset, d)) for name, d in sizes.items()]
    mean = sum(s for _, s in rows) / len(rows)
    return rows, mean
