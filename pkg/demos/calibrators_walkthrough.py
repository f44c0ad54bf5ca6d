"""Fit every calibrator by hand on the bundled synthetic scenario.

The training split has its per-level log-odds shifted and 10% of negatives
flipped, so Model-1 is miscalibrated both globally and per level of the
fairness field ``z``. Univariate calibrators only see the logit and can fix
the global part. Neural Calibration also sees the features and can fix the
per-level part.

    python demos/calibrators_walkthrough.py
"""

import numpy as np
from scipy.special import expit

from fieldcal import config as cfg
from fieldcal import pipeline as P
from fieldcal import predict_logits
from fieldcal.scaling import ilps_eta
from fieldcal.metrics import PredictionSet, auc, field_breakdown, field_ece, log_loss

config = cfg.load_config()
seed = config.seed
train, valid, test = P.prepare_splits(config, seed)
print(f"rows: train {len(train)}, valid {len(valid)}, test {len(test)}")

model1 = P.train_model1(config, seed, train)
l_valid = predict_logits(model1, valid)
l_test = predict_logits(model1, test)

print(f"\n{'method':<20} {'log-loss':>9} {'Field-ECE':>10} {'AUC':>8}")
fitted = {}
for method in P.METHODS:
    fitted[method] = P.fit_method(method, config, seed, model1, valid, l_valid)
    ps = PredictionSet(P.predict(fitted[method], model1, test, l_test), test.labels, test.z)
    print(f"{method:<20} {log_loss(ps):>9.4f} {field_ece(ps):>10.4f} {auc(ps):>8.4f}")

platt = fitted["platt"]
print(f"\nPlatt: q = sigmoid({platt.a:.3f} * l + {platt.b:.3f})")

ilps = fitted["ilps"]
grid = np.quantile(l_test, [0.05, 0.25, 0.5, 0.75, 0.95])
print("ILPS eta(l) at test-logit quantiles:")
for l, e in zip(grid, ilps_eta(grid, ilps)):
    print(f"  l = {l:+.3f} -> eta = {e:+.3f}")

# the per-level gaps that only Neural Calibration can close
names = P.level_names(test)
before = field_breakdown(PredictionSet(expit(l_test), test.labels, test.z), names)
after = field_breakdown(PredictionSet(P.predict(fitted["neural_calibration"], model1, test, l_test), test.labels, test.z), names)
print(f"\n{'level':<6} {'rate':>6} {'Model-1 gap':>12} {'NC gap':>8}")
for b, a in zip(before, after):
    print(f"{b.level:<6} {b.mean_outcome:>6.3f} {b.abs_gap:>12.3f} {a.abs_gap:>8.3f}")
