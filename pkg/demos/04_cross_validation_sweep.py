# # Record-level evaluation
#
# A record is called abnormal when more than a fraction T_a of its beats
# are. Cross-validation trains per fold and run, stores each test record's
# A-beat fraction, and a sweep re-thresholds those fractions without
# retraining.

import numpy as np

from pcgcnn import NetworkConfig, TrainConfig, cross_validate, kfold_split, sweep_threshold
from pcgcnn.evaluation import curves_csv
from pcgcnn.synthetic import make_records

# %%

records, _ = make_records(12, 8, beats_per_record=8, length=200, seed=5, inject_fraction=0.2)
config = NetworkConfig(input_length=200, cnn_hidden_layers=3, mlp_hidden_layers=2,
                       neurons_per_hidden_layer=8, kernel_size=9, subsample_factor=4)
plan = kfold_split(records, k=4, seed=0, runs=2)
for f in range(plan.k):
    print("fold %d tests %s" % (f, plan.test_ids(f)))

# %%

result = cross_validate(records, plan, TrainConfig(), config, t_a=0.25)
print("final confusion matrix:", result.final.to_dict())
print("metrics at T_a=0.25:", result.metrics)

# %%
# Sensitivity can only fall and specificity only rise as T_a grows.

points = sweep_threshold(result.outcomes, np.linspace(0.1, 0.4, 31))
print(curves_csv(points))
