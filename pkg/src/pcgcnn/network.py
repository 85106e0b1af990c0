"""Adaptive 1D CNN: topology, signal kernels, forward propagation and beat decisions.

CNN layers and MLP layers share one code path. An MLP layer is a CNN layer
whose maps have length 1, kernel length 1 and no pooling. The output CNN
layer pools over its whole pre-pooling map so that it emits one scalar per
neuron, whatever the input length.

All arrays are float64. Batched tensors use the layout
``(batch, neurons, samples)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "NetworkConfig",
    "LayerShape",
    "Network",
    "Beat",
    "ForwardTrace",
    "BeatDecision",
    "OpCounter",
    "ShapeError",
    "ACTIVATIONS",
    "build_network",
    "layer_shapes",
    "conv1d_valid",
    "conv1d_full",
    "avg_pool",
    "upsample_zero_order",
    "forward",
    "compute_confidence",
    "classify_beat",
    "classify_batch",
    "targets_for",
]

LABEL_N = "N"
LABEL_A = "A"


class ShapeError(ValueError):
    """Raised when array lengths do not conform to the network topology."""


def _tanh_prime(x, y):
    return 1.0 - y * y


def _linear(x):
    return x


def _linear_prime(x, y):
    return np.ones_like(x)


# name -> (f, f'(x, f(x)))
ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_prime),
    "linear": (_linear, _linear_prime),
}


@dataclass(frozen=True)
class NetworkConfig:
    input_length: int = 1000
    cnn_hidden_layers: int = 3
    mlp_hidden_layers: int = 2
    neurons_per_hidden_layer: int = 24
    output_neurons: int = 2
    kernel_size: int = 41
    subsample_factor: int = 4
    # None selects sqrt(6 / fan_in) per layer
    weight_init_half_range: Optional[float] = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.output_neurons != 2:
            raise ValueError("output_neurons must be 2 (N/A problem), got %r" % self.output_neurons)
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if self.subsample_factor < 1:
            raise ValueError("subsample_factor must be >= 1")
        if self.input_length < 1:
            raise ValueError("input_length must be >= 1")
        if self.cnn_hidden_layers < 1:
            raise ValueError("at least one CNN layer is required")
        if self.mlp_hidden_layers < 0:
            raise ValueError("mlp_hidden_layers must be >= 0")
        if self.neurons_per_hidden_layer < 1:
            raise ValueError("neurons_per_hidden_layer must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError("unknown activation %r (choose from %s)"
                             % (self.activation, sorted(ACTIVATIONS)))
        if self.weight_init_half_range is not None and not self.weight_init_half_range > 0:
            raise ValueError("weight_init_half_range must be positive")


@dataclass(frozen=True)
class LayerShape:
    """Lengths for one layer.

    ``in_length`` is the length of the previous layer's output maps,
    ``pre_length`` the convolution output (pre-activation) length,
    ``out_length`` the pooled output length.
    """
    kind: str  # "cnn" or "mlp"
    n_in: int
    n_out: int
    in_length: int
    kernel_size: int
    pre_length: int
    subsample: int
    out_length: int


def layer_shapes(config: NetworkConfig) -> list[LayerShape]:
    """Propagate lengths through the topology; raise ShapeError naming the bad layer."""
    shapes = []
    length = config.input_length
    n_in = 1
    K = config.kernel_size
    ss = config.subsample_factor
    H = config.neurons_per_hidden_layer
    for l in range(1, config.cnn_hidden_layers + 1):
        pre = length - K + 1
        if pre < 1:
            raise ShapeError(
                "CNN layer %d: input length %d is shorter than kernel size %d "
                "(pre-pooling length would be %d)" % (l, length, K, pre))
        if l == config.cnn_hidden_layers:
            factor = pre
        else:
            factor = ss
            if pre % ss:
                raise ShapeError(
                    "CNN layer %d: pre-pooling length %d is not divisible by "
                    "subsample factor %d" % (l, pre, ss))
        out = pre // factor
        shapes.append(LayerShape("cnn", n_in, H, length, K, pre, factor, out))
        length, n_in = out, H
    for n_out in [H] * config.mlp_hidden_layers + [config.output_neurons]:
        shapes.append(LayerShape("mlp", n_in, n_out, 1, 1, 1, 1, 1))
        n_in = n_out
    return shapes


@dataclass
class Network:
    config: NetworkConfig
    weights: list[np.ndarray]  # per layer, shape (n_in, n_out, kernel_size)
    biases: list[np.ndarray]   # per layer, shape (n_out,)
    shapes: list[LayerShape] = field(default_factory=list)

    def __post_init__(self):
        if not self.shapes:
            self.shapes = layer_shapes(self.config)
        if len(self.weights) != len(self.shapes) or len(self.biases) != len(self.shapes):
            raise ShapeError("expected %d layers of parameters, got %d weights / %d biases"
                             % (len(self.shapes), len(self.weights), len(self.biases)))
        for i, (w, b, sh) in enumerate(zip(self.weights, self.biases, self.shapes)):
            if w.shape != (sh.n_in, sh.n_out, sh.kernel_size):
                raise ShapeError("layer %d kernel shape %s, expected %s"
                                 % (i + 1, w.shape, (sh.n_in, sh.n_out, sh.kernel_size)))
            if b.shape != (sh.n_out,):
                raise ShapeError("layer %d bias shape %s, expected %s"
                                 % (i + 1, b.shape, (sh.n_out,)))

    @property
    def last_cnn_subsample(self) -> int:
        return self.shapes[self.config.cnn_hidden_layers - 1].subsample

    @property
    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network(self.config, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases], list(self.shapes))

    def flat_parameters(self) -> np.ndarray:
        """All kernels then biases, layer by layer, as one vector."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def with_flat_parameters(self, flat: np.ndarray) -> "Network":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_parameters:
            raise ShapeError("expected %d parameters, got %d" % (self.n_parameters, flat.size))
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(flat[pos:pos + b.size].copy())
            pos += b.size
        return Network(self.config, weights, biases, list(self.shapes))

    def zeros_like(self) -> "Network":
        return Network(self.config, [np.zeros_like(w) for w in self.weights],
                       [np.zeros_like(b) for b in self.biases], list(self.shapes))


@dataclass
class Beat:
    samples: np.ndarray
    record_id: str = ""
    record_label: str = LABEL_N
    skip: bool = False
    raw_noise_variance: float = 0.0
    degenerate: bool = False


class OpCounter:
    """Multiply/add tallies filled in by the convolution kernels.

    Adds are counted as multiply-accumulates, so one add per multiply.
    """

    def __init__(self):
        self.counts: dict[tuple[str, int], list[int]] = {}

    def add(self, stage: str, layer: int, mults: int, adds: Optional[int] = None):
        entry = self.counts.setdefault((stage, layer), [0, 0])
        entry[0] += int(mults)
        entry[1] += int(mults if adds is None else adds)

    def get(self, stage: str, layer: int) -> tuple[int, int]:
        m, a = self.counts.get((stage, layer), (0, 0))
        return m, a

    def reset(self):
        self.counts.clear()


def build_network(config: NetworkConfig, seed: int = 0) -> Network:
    """Compute the shape table and draw every parameter from U(-a, a)."""
    shapes = layer_shapes(config)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for sh in shapes:
        if config.weight_init_half_range is None:
            a = np.sqrt(6.0 / (sh.n_in * sh.kernel_size))
        else:
            a = config.weight_init_half_range
        weights.append(rng.uniform(-a, a, size=(sh.n_in, sh.n_out, sh.kernel_size)))
        biases.append(rng.uniform(-a, a, size=sh.n_out))
    return Network(config, weights, biases, shapes)


# ---------------------------------------------------------------------------
# signal-level kernels

def conv1d_valid(signal, kernel, counter: Optional[OpCounter] = None) -> np.ndarray:
    """Sliding dot product without padding: ``out[n] = sum_j signal[n + j] * kernel[j]``."""
    s = np.asarray(signal, dtype=np.float64)
    w = np.asarray(kernel, dtype=np.float64)
    if s.ndim != 1 or w.ndim != 1 or w.size < 1:
        raise ShapeError("conv1d_valid expects two non-empty 1-D arrays")
    if s.size < w.size:
        raise ShapeError("signal length %d is shorter than kernel length %d" % (s.size, w.size))
    out = sliding_window_view(s, w.size) @ w
    if counter is not None:
        counter.add("conv", 0, out.size * w.size)
    return out


def conv1d_full(signal, kernel, counter: Optional[OpCounter] = None) -> np.ndarray:
    """Sliding dot product over the signal zero-padded by ``K - 1`` on both ends.

    With ``kernel`` reversed this is the adjoint of :func:`conv1d_valid`.
    """
    d = np.asarray(signal, dtype=np.float64)
    w = np.asarray(kernel, dtype=np.float64)
    if d.ndim != 1 or w.ndim != 1 or d.size < 1 or w.size < 1:
        raise ShapeError("conv1d_full expects two non-empty 1-D arrays")
    padded = np.pad(d, w.size - 1)
    return conv1d_valid(padded, w, counter)


def avg_pool(signal, ss: int) -> np.ndarray:
    """Average non-overlapping windows of ``ss`` samples along the last axis."""
    v = np.asarray(signal, dtype=np.float64)
    if ss < 1:
        raise ValueError("ss must be >= 1")
    n = v.shape[-1]
    if n % ss:
        raise ShapeError("length %d is not divisible by subsample factor %d" % (n, ss))
    if ss == 1:
        return v.copy()
    return v.reshape(v.shape[:-1] + (n // ss, ss)).mean(axis=-1)


def upsample_zero_order(signal, ss: int) -> np.ndarray:
    """Repeat every sample ``ss`` times along the last axis."""
    if ss < 1:
        raise ValueError("ss must be >= 1")
    return np.repeat(np.asarray(signal, dtype=np.float64), ss, axis=-1)


def _windows(s, K):
    # (B, N, n) -> (B, N, n - K + 1, K)
    return sliding_window_view(s, K, axis=2)


def conv_layer_valid(s: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Batched layer sum: ``x[b, k] = sum_i valid(s[b, i], w[i, k])``.

    ``s`` is (B, n_in, n), ``w`` is (n_in, n_out, K); result is (B, n_out, n - K + 1).
    """
    K = w.shape[2]
    if K == 1 and s.shape[2] == 1:
        return (s[:, :, 0] @ w[:, :, 0])[:, :, None]
    win = _windows(s, K)
    return np.einsum("binj,ikj->bkn", win, w, optimize=True)


# ---------------------------------------------------------------------------
# forward propagation

@dataclass
class ForwardTrace:
    """Intermediates of one forward pass.

    ``inputs[l]`` is the map fed to layer ``l`` (``inputs[0]`` is the beat),
    ``pre[l]``/``act[l]``/``pooled[l]`` are x, y and s of that layer.
    Every array carries a leading batch axis.
    """
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    act: list[np.ndarray]
    pooled: list[np.ndarray]
    batched: bool = True

    @property
    def outputs(self) -> np.ndarray:
        out = self.pooled[-1][:, :, 0]
        return out if self.batched else out[0]

    @property
    def batch_size(self) -> int:
        return self.inputs[0].shape[0]


def _as_batch(network: Network, beats) -> tuple[np.ndarray, bool]:
    if isinstance(beats, Beat):
        arr, batched = np.asarray(beats.samples, dtype=np.float64)[None, :], False
    elif isinstance(beats, (list, tuple)) and beats and isinstance(beats[0], Beat):
        arr, batched = np.stack([np.asarray(b.samples, dtype=np.float64) for b in beats]), True
    else:
        arr = np.asarray(beats, dtype=np.float64)
        batched = arr.ndim == 2
        if arr.ndim == 1:
            arr = arr[None, :]
        elif arr.ndim != 2:
            raise ShapeError("beats must be a 1-D beat or a 2-D (batch, samples) array")
    if arr.shape[1] != network.config.input_length:
        raise ShapeError("beat length %d does not match network input length %d"
                         % (arr.shape[1], network.config.input_length))
    return arr, batched


def forward(network: Network, beats, counter: Optional[OpCounter] = None) -> ForwardTrace:
    """Propagate one beat (1-D) or a batch (2-D) through the network.

    Each layer computes bias + summed valid convolutions, the activation,
    then average pooling.
    """
    arr, batched = _as_batch(network, beats)
    f, _ = ACTIVATIONS[network.config.activation]
    s = arr[:, None, :]
    inputs, pre, act, pooled = [], [], [], []
    for l, (w, b, sh) in enumerate(zip(network.weights, network.biases, network.shapes)):
        inputs.append(s)
        x = conv_layer_valid(s, w) + b[None, :, None]
        y = f(x)
        s = avg_pool(y, sh.subsample) if sh.subsample > 1 else y
        pre.append(x)
        act.append(y)
        pooled.append(s)
        if counter is not None:
            counter.add("fp", l + 1, arr.shape[0] * sh.n_in * sh.n_out * sh.pre_length * sh.kernel_size)
    return ForwardTrace(inputs, pre, act, pooled, batched)


class BeatDecision(NamedTuple):
    label: str
    confidence: float


def compute_confidence(outputs) -> Union[float, np.ndarray]:
    """CL(N) in percent: ``50 * (y1 - y2)``; works row-wise on (B, 2) arrays."""
    y = np.asarray(outputs, dtype=np.float64)
    if y.shape[-1] != 2:
        raise ShapeError("expected two network outputs, got shape %s" % (y.shape,))
    cl = 50.0 * (y[..., 0] - y[..., 1])
    return float(cl) if cl.ndim == 0 else cl


def decide(confidence: float, decision_threshold: float = 0.0) -> str:
    return LABEL_N if confidence > decision_threshold else LABEL_A


def classify_beat(network: Network, beat, decision_threshold: float = 0.0) -> BeatDecision:
    """Label one beat N when CL(N) exceeds ``decision_threshold``, else A."""
    trace = forward(network, beat)
    cl = compute_confidence(trace.outputs.reshape(-1, 2)[0])
    return BeatDecision(decide(cl, decision_threshold), cl)


def classify_batch(network: Network, beats, decision_threshold: float = 0.0
                   ) -> tuple[list[str], np.ndarray]:
    trace = forward(network, beats)
    cl = np.atleast_1d(compute_confidence(trace.outputs.reshape(-1, 2)))
    return [decide(c, decision_threshold) for c in cl], cl


def targets_for(labels: Sequence[str]) -> np.ndarray:
    """Neuron 1 is N, neuron 2 is A: N -> [+1, -1], A -> [-1, +1]."""
    out = np.empty((len(labels), 2))
    for i, lab in enumerate(labels):
        if lab == LABEL_N:
            out[i] = (1.0, -1.0)
        elif lab == LABEL_A:
            out[i] = (-1.0, 1.0)
        else:
            raise ValueError("label must be 'N' or 'A', got %r" % (lab,))
    return out
