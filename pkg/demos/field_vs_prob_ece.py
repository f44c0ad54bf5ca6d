"""Prob-ECE can be zero while Field-ECE is large.

Two equally sized groups have positive rates 0.1 and 0.9. A model that
predicts the overall base rate 0.5 for everybody is perfectly calibrated
when rows are grouped by the prediction itself (one bin, mean 0.5, observed
0.5), but each group is off by 0.4.

    python demos/field_vs_prob_ece.py
"""

import numpy as np

from fieldcal import PredictionSet, field_ece, prob_ece
from fieldcal.metrics import field_breakdown

y = np.array([1] * 10 + [0] * 90 + [1] * 90 + [0] * 10)
z = np.array(["low"] * 100 + ["high"] * 100)
ps = PredictionSet(np.full(200, y.mean()), y, z)

print(f"prob_ece  = {prob_ece(ps):.4f}")
print(f"field_ece = {field_ece(ps):.4f}")
print()
print(f"{'level':>6} {'rows':>5} {'mean p':>7} {'rate':>6} {'gap':>6}")
for row in field_breakdown(ps):
    print(f"{row.level:>6} {row.count:>5} {row.mean_prediction:>7.3f} {row.mean_outcome:>6.3f} {row.abs_gap:>6.3f}")

# predicting each group's own rate removes the field-level error too
fixed = PredictionSet(np.where(z == "low", 0.1, 0.9), y, z)
print()
print(f"group-aware prediction: prob_ece = {prob_ece(fixed):.4f}, field_ece = {field_ece(fixed):.4f}")
