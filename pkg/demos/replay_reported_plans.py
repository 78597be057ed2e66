"""
Replaying published winning plans
=================================

Without the large models we cannot measure accuracies, but the replay
evaluator lets the search run against a lookup table. Here each dataset's
reported winning plan is planted as the best entry of a synthetic surface,
and the search with the matching preset must find it.
"""

import numpy as np

from cluster_laser.search import EvaluatorBinding, ReplayEvaluator, preset_space, reported_plans, run_search
from cluster_laser.tensor_store import MatrixRecord, ModelBundle

rng = np.random.default_rng(0)
records = []
for layer in range(28):
    for kind in ("mlp_in", "mlp_out"):
        records.append(MatrixRecord(f"L{layer}.{kind}", layer, kind, "weight", rng.standard_normal((16, 4))))
bundle = ModelBundle("gptj-shaped", 28, records)

space, config = preset_space("gptj", "cl_full")
for dataset, entry in reported_plans()["cl_full"]["gptj"].items():
    key = (entry[0], entry[1], entry[2], entry[3])
    table = {(None, None, 1.0, 1): 0.50, key: 0.75}
    binding = EvaluatorBinding(ReplayEvaluator(table, default=0.40), d=1000)
    out = run_search(bundle, space, config, binding)
    print(f"{dataset:<30} reported {entry}  found {out.best_plan.as_tuple()}  arms {out.candidates_evaluated}")
