"""
Finding a damaged matrix from one gradient pass
===============================================

Three toy classifiers are trained on the same data. One of them gets a
rank-24 perturbation added to its input matrix, which makes it read nuisance
directions of the inputs. We then score every matrix from the singular-value
gradients of 100 calibration examples and let the search repair the worst one.
"""

import numpy as np

from cluster_laser import cost_model
from cluster_laser.search import EvaluatorBinding, SearchConfig, SearchSpace, run_search, sample_calibration
from cluster_laser.sv_gradient import singular_value_gradients
from cluster_laser.toy_network import accuracy, batch_loss_and_gradients, planted_noise_scenario

sc = planted_noise_scenario(seed=0)
test = sc.dataset.subset(range(300, 1500))
print("planted in", sc.planted_id)
print(f"test accuracy clean {accuracy(sc.clean, test):.4f}  noisy {accuracy(sc.noisy, test):.4f}")

# Singular-value gradients of the planted matrix, before and after the noise.
# Negative entries in the small-sigma tail say the loss wants those
# directions shrunk, which is what the score sums up.
calib = sc.dataset.subset(sample_calibration(range(300), 100, seed=0))
for label, models in (("clean", sc.clean), ("noisy", sc.noisy)):
    m = models[1]
    _, [(gW1, *_)] = batch_loss_and_gradients([m], calib.inputs, calib.labels)
    g = singular_value_gradients(m.W1, gW1)
    print(f"{label:>5} tail of g:", np.round(g[-8:], 2))

# The full search: rank all six matrices, keep the top two and try every
# (rho, K) arm on them using the same 100 calibration examples.
space = SearchSpace(layers=(0, 1, 2), kinds=("mlp_in", "mlp_out"), rhos=cost_model.RHO_GRID, cluster_levels=(1, 2, 4))
binding = EvaluatorBinding(sc.evaluator(), d=sc.d)
out = run_search(sc.bundle(), space, SearchConfig(method="cl_100g_100e", q=2), binding)

for mid, score in out.ranked_matrices:
    print(f"ranked {mid:<12} score {score:.3f}")
print("selected plan", out.best_plan.as_tuple(), "on", out.best_plan.matrix_id)
print(f"test accuracy after the plan {out.test_accuracy:.4f}")
print(f"{out.candidates_evaluated} arms, {out.forward_pass_equivalents:g} forward-pass-equivalents")
