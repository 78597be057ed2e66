"""
Search cost in forward-pass-equivalents
=======================================

Every method's cost is affine in the dataset size d. The speedup of a method
is the exhaustive search's cost divided by its own.
"""

from cluster_laser import cost_model

for preset in cost_model.PRESETS:
    print(f"\n{preset}")
    for method in cost_model.METHODS:
        print(f"  {method:<16} {str(cost_model.formula(method, preset)):>16}")

# Per-dataset speedups of the two fast methods on the larger preset
for method in ("cl_100g_100e", "laser_100g_100e"):
    rows, mean = cost_model.speedup_table(method, "gptj")
    print(f"\n{method} on gptj")
    for name, s in rows:
        print(f"  {name:<30} d={cost_model.DATASET_SIZES[name]:>6}  {s:7.2f}x")
    print(f"  {'mean':<30} {'':>8}  {mean:7.2f}x")

# The factored form spells out where the cost goes
terms = cost_model.factored_terms("cl_100g_100e", "gptj", 10000)
print("\ncl_100g_100e, gptj, d=10000:", terms, "->", cost_model.search_cost(**terms))
