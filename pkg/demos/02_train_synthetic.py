# # Training on synthetic heart-sound beats
#
# Normal beats carry S1 and S2 bursts; abnormal ones add a systolic murmur.
# Training follows the adaptive learning-rate rule (x1.05 after an MSE
# drop, x0.70 otherwise) and stops at 8% training error or 50 iterations.

import numpy as np

from pcgcnn import NetworkConfig, TrainConfig, build_network, classify_batch, train
from pcgcnn.synthetic import make_beats

# %%
# A compact network for 200-sample beats keeps the run to a few seconds.

config = NetworkConfig(input_length=200, cnn_hidden_layers=3, mlp_hidden_layers=2,
                       neurons_per_hidden_layer=8, kernel_size=9, subsample_factor=4)
train_beats = make_beats(100, 100, length=200, seed=1)
test_beats = make_beats(50, 50, length=200, seed=2)

# %%

net, history = train(build_network(config, seed=0), train_beats, TrainConfig(seed=0))
print(history.to_csv())
print("stopped after %d iterations: %s" % (len(history), history.stop_reason))

# %%
# Beat-level accuracy on held-out beats.

labels, confidence = classify_batch(net, np.stack([b.samples for b in test_beats]))
acc = np.mean([p == b.record_label for p, b in zip(labels, test_beats)])
print("test accuracy: %.3f" % acc)
print("first CL(N) values:", np.round(confidence[:5], 1))
