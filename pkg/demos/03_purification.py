# # Data purification
#
# Abnormal records also contain normal-looking beats. Their A label is
# wrong at the beat level. Every few iterations the current network scores
# the beats of A records and drops those it calls normal with confidence
# above R(t) until the next check. R(t) decays from 95% towards a 50% floor.

import numpy as np

from pcgcnn import NetworkConfig, TrainConfig, build_network, train
from pcgcnn.synthetic import make_records
from pcgcnn.training import threshold_schedule

# %%

print("R(t):", [threshold_schedule(t) for t in (0, 5, 10, 20, 45, 60)])

# %%
# 30% of the beats in every A record get the normal morphology.

records, truth = make_records(10, 10, beats_per_record=10, length=200, seed=3,
                              inject_fraction=0.3)
beats = [b for r in records for b in r.beats]
config = NetworkConfig(input_length=200, cnn_hidden_layers=3, mlp_hidden_layers=2,
                       neurons_per_hidden_layer=8, kernel_size=9, subsample_factor=4)

net, history = train(build_network(config, 0), beats, TrainConfig(min_train_error=0.0))
print("skipped per iteration:", history.column("skipped").astype(int).tolist())

# %%
# Which beats carry a skip mark after the last check?

hidden = [b for b in beats if b.record_label == "A" and truth[id(b)] == "N"]
genuine = [b for b in beats if b.record_label == "A" and truth[id(b)] == "A"]
print("injected normal beats skipped: %d / %d" % (sum(b.skip for b in hidden), len(hidden)))
print("genuine abnormal beats skipped: %d / %d" % (sum(b.skip for b in genuine), len(genuine)))
