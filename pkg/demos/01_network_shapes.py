# # Network shapes and the adaptive pooling rule
#
# A network is described by a NetworkConfig. Every CNN layer shortens its
# maps by K-1 through a valid convolution, then average-pools by the
# subsample factor. The last CNN layer pools by its whole length, so it
# hands exactly one scalar per neuron to the MLP layers.

import numpy as np

from pcgcnn import NetworkConfig, build_network, forward, layer_shapes

# %%
# The default configuration: 1000-sample beats, kernels of 41, pooling by 4,
# three CNN layers and two MLP layers of 24 neurons, two outputs.

config = NetworkConfig()
for sh in layer_shapes(config):
    print("%-3s %2d -> %2d  in %4d  conv %4d  pool /%-3d -> %4d"
          % (sh.kind, sh.n_in, sh.n_out, sh.in_length, sh.pre_length, sh.subsample, sh.out_length))

# %%
# The last CNN layer picked a pooling factor of 10 on its own.

net = build_network(config, seed=0)
print("last CNN pooling factor:", net.last_cnn_subsample)
print("parameters:", net.n_parameters)

# %%
# One forward pass keeps every intermediate map for back-propagation.

beat = np.sin(np.linspace(0, 40, 1000))
trace = forward(net, beat)
for l, (x, s) in enumerate(zip(trace.pre, trace.pooled), start=1):
    print("layer %d: x %s  s %s" % (l, x.shape[1:], s.shape[1:]))
print("outputs:", trace.outputs)

# %%
# Configurations that cannot be built are rejected with the layer named.

try:
    layer_shapes(NetworkConfig(input_length=100))
except ValueError as exc:
    print("rejected:", exc)
