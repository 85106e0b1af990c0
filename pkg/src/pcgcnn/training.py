"""Back-propagation, gradient-descent updates and purification-aware training."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .network import (
    ACTIVATIONS,
    LABEL_A,
    LABEL_N,
    Beat,
    ForwardTrace,
    Network,
    OpCounter,
    ShapeError,
    compute_confidence,
    forward,
    targets_for,
    upsample_zero_order,
)

__all__ = [
    "TrainConfig",
    "GradientSet",
    "IterationRecord",
    "TrainHistory",
    "mse_loss",
    "backward",
    "apply_update",
    "adapt_learning_rate",
    "threshold_schedule",
    "purification_check",
    "accumulate_gradients",
    "train",
]

log = logging.getLogger(__name__)

FULL_BATCH = "full-batch"
PER_BEAT = "per-beat"


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 50
    min_train_error: float = 0.08
    initial_learning_rate: float = 1e-3
    lr_up: float = 1.05
    lr_down: float = 0.70
    purification_enabled: bool = True
    check_period: int = 5
    threshold_initial: float = 95.0
    threshold_floor: float = 50.0
    threshold_slope: float = 1.0
    update_mode: str = PER_BEAT
    seed: int = 0
    # beats per forward/backward block; bounds memory, not results
    chunk_size: int = 256

    def __post_init__(self):
        if not 0.0 < self.lr_down < 1.0 < self.lr_up:
            raise ValueError("need 0 < lr_down < 1 < lr_up")
        if not 0.0 <= self.threshold_floor <= self.threshold_initial <= 100.0:
            raise ValueError("need 0 <= threshold_floor <= threshold_initial <= 100")
        if self.check_period < 1:
            raise ValueError("check_period must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.initial_learning_rate <= 0:
            raise ValueError("initial_learning_rate must be positive")
        if self.update_mode not in (FULL_BATCH, PER_BEAT):
            raise ValueError("update_mode must be %r or %r" % (FULL_BATCH, PER_BEAT))
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


@dataclass
class GradientSet:
    """Sensitivities dE/dw and dE/db, summed over the beats of one backward call.

    ``deltas[l]`` is the delta map of layer ``l`` (dE/dx) and
    ``pooled_deltas[l]`` the delta of its pooled output (dE/ds), both batched.
    """
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    deltas: list[np.ndarray] = field(default_factory=list)
    pooled_deltas: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_for(cls, network: Network) -> "GradientSet":
        return cls([np.zeros_like(w) for w in network.weights],
                   [np.zeros_like(b) for b in network.biases])

    def add_(self, other: "GradientSet") -> "GradientSet":
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b
        return self

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)


def mse_loss(outputs, targets) -> float:
    """Sum of squared output errors for one beat (no averaging)."""
    y = np.asarray(outputs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if y.shape != (2,) or t.shape != (2,):
        raise ShapeError("mse_loss expects two outputs and two targets")
    return float(np.sum((y - t) ** 2))


def backward(network: Network, trace: ForwardTrace, targets,
             counter: Optional[OpCounter] = None) -> GradientSet:
    """Back-propagate the squared error of ``trace`` and return summed sensitivities.

    ``targets`` is (2,) for a single-beat trace or (B, 2) for a batch.
    """
    if len(trace.pre) != len(network.shapes):
        raise ShapeError("trace has %d layers, network has %d"
                         % (len(trace.pre), len(network.shapes)))
    B = trace.batch_size
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if t.shape[0] != B:
        if t.shape[0] == 1:
            t = np.broadcast_to(t, (B, 2))
        else:
            raise ShapeError("got %d targets for a batch of %d" % (t.shape[0], B))
    for l, (x, sh) in enumerate(zip(trace.pre, network.shapes)):
        if x.shape[1:] != (sh.n_out, sh.pre_length):
            raise ShapeError("trace layer %d shape %s does not match network"
                             % (l + 1, x.shape[1:]))

    _, fprime = ACTIVATIONS[network.config.activation]
    n_layers = len(network.shapes)
    gw: list = [None] * n_layers
    gb: list = [None] * n_layers
    deltas: list = [None] * n_layers
    pooled_deltas: list = [None] * n_layers

    ds = 2.0 * (trace.pooled[-1] - t[:, :, None])
    for l in range(n_layers - 1, -1, -1):
        sh = network.shapes[l]
        w = network.weights[l]
        K = sh.kernel_size
        pooled_deltas[l] = ds
        if sh.subsample > 1:
            dy = upsample_zero_order(ds, sh.subsample) * (1.0 / sh.subsample)
        else:
            dy = ds
        delta = dy * fprime(trace.pre[l], trace.act[l])
        deltas[l] = delta
        gb[l] = delta.sum(axis=(0, 2))

        s_prev = trace.inputs[l]
        if sh.kind == "mlp":
            gw[l] = (s_prev[:, :, 0].T @ delta[:, :, 0])[:, :, None]
        else:
            # dE/dw[i, k] = valid(s_prev[i], delta[k]), summed over the batch
            win = sliding_window_view(s_prev, sh.pre_length, axis=2)
            gw[l] = np.einsum("bijn,bkn->ikj", win, delta, optimize=True)
        if counter is not None:
            counter.add("bp_weight", l + 1, B * sh.n_in * sh.n_out * K * sh.pre_length)

        if l > 0:
            if sh.kind == "mlp":
                ds = (delta[:, :, 0] @ w[:, :, 0].T)[:, :, None]
            else:
                # full convolution with reversed kernels
                padded = np.pad(delta, ((0, 0), (0, 0), (K - 1, K - 1)))
                win = sliding_window_view(padded, K, axis=2)
                ds = np.einsum("bknj,ikj->bin", win, w[:, :, ::-1], optimize=True)
            if counter is not None:
                counter.add("bp_delta", l + 1, B * sh.n_in * sh.n_out * sh.in_length * K)
    return GradientSet(gw, gb, deltas, pooled_deltas)


def apply_update(network: Network, grads: GradientSet, lr: float) -> Network:
    """Return a new network with ``w - lr * dE/dw`` and ``b - lr * dE/db``."""
    if len(grads.weights) != len(network.weights):
        raise ShapeError("gradient set does not match network")
    weights, biases = [], []
    for w, b, gw, gb in zip(network.weights, network.biases, grads.weights, grads.biases):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ShapeError("gradient shape %s does not match parameter shape %s"
                             % (gw.shape, w.shape))
        weights.append(w - lr * gw)
        biases.append(b - lr * gb)
    return Network(network.config, weights, biases, list(network.shapes))


def adapt_learning_rate(prev_mse: float, curr_mse: float, lr: float,
                        config: TrainConfig = TrainConfig()) -> float:
    """Grow the rate after a strict MSE decrease, shrink it otherwise."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    return lr * (config.lr_up if curr_mse < prev_mse else config.lr_down)


def threshold_schedule(t: int, config: TrainConfig = TrainConfig()) -> float:
    """Purification threshold R(t) in percent, decaying linearly to a floor."""
    if t < 0:
        raise ValueError("iteration must be >= 0")
    return max(config.threshold_floor, config.threshold_initial - config.threshold_slope * t)


def purification_check(network: Network, beats: Sequence[Beat], R: float,
                       chunk_size: int = 256) -> np.ndarray:
    """Recompute skip marks: an A-record beat is skipped when CL(N) > R.

    Marks are set on the beats and also returned. Beats of N records are
    never skipped.
    """
    marks = np.zeros(len(beats), dtype=bool)
    idx = [i for i, b in enumerate(beats) if b.record_label == LABEL_A]
    for start in range(0, len(idx), chunk_size):
        part = idx[start:start + chunk_size]
        outputs = forward(network, np.stack([beats[i].samples for i in part])).outputs
        cl = compute_confidence(outputs)
        marks[part] = cl > R
    for b, m in zip(beats, marks):
        b.skip = bool(m)
    return marks


def accumulate_gradients(network: Network, beats: Sequence[Beat], chunk_size: int = 256
                         ) -> tuple[GradientSet, np.ndarray]:
    """Summed sensitivities over the non-skipped beats, plus their outputs.

    Skipped beats are filtered out before any arithmetic, so a skipped beat
    and a removed beat give identical results.
    """
    active = [b for b in beats if not b.skip]
    total = GradientSet.zeros_for(network)
    outputs = np.empty((len(active), 2))
    for start in range(0, len(active), chunk_size):
        part = active[start:start + chunk_size]
        samples = np.stack([b.samples for b in part])
        targets = targets_for([b.record_label for b in part])
        trace = forward(network, samples)
        total.add_(backward(network, trace, targets))
        outputs[start:start + len(part)] = trace.outputs
    return total, outputs


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    mse: float
    class_err: float
    lr: float
    skipped: int
    r_t: float


@dataclass
class TrainHistory:
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iter", "mse", "class_err", "lr", "skipped", "r_t"])
        for r in self.records:
            writer.writerow([r.iter, repr(r.mse), repr(r.class_err), repr(r.lr),
                             r.skipped, repr(r.r_t)])
        return buf.getvalue()


def _errors(outputs: np.ndarray, beats: Sequence[Beat]) -> tuple[float, float]:
    if not len(beats):
        return 0.0, 0.0
    targets = targets_for([b.record_label for b in beats])
    mse = float(np.mean(np.sum((outputs - targets) ** 2, axis=1)))
    predicted_n = compute_confidence(outputs) > 0.0
    truth_n = np.array([b.record_label == LABEL_N for b in beats])
    return mse, float(np.mean(predicted_n != truth_n))


def train(network: Network, beats: Sequence[Beat], config: TrainConfig = TrainConfig()
          ) -> tuple[Network, TrainHistory]:
    """Train with gradient descent, adaptive learning rate and purification.

    Each iteration: periodic purification check (every ``check_period``
    iterations, never at t=0), forward/backward over the non-skipped beats,
    learning-rate adaptation, early-stopping test, then the update. Beats
    flagged as degenerate are left out. The skip marks on ``beats`` are
    reset at the start and reflect the last check on return.
    """
    usable = [b for b in beats if not b.degenerate]
    if not usable:
        raise ValueError("training set is empty")
    labels = {b.record_label for b in usable}
    if labels != {LABEL_N, LABEL_A}:
        raise ValueError("training set must contain both N and A beats, got %s" % sorted(labels))
    for b in usable:
        if len(b.samples) != network.config.input_length:
            raise ShapeError("beat of length %d does not match network input length %d"
                             % (len(b.samples), network.config.input_length))
        b.skip = False

    history = TrainHistory()
    net = network.copy()
    lr = config.initial_learning_rate
    prev_mse = None
    rng = np.random.default_rng(config.seed)
    for t in range(config.max_iterations):
        r_t = threshold_schedule(t, config)
        if config.purification_enabled and t > 0 and t % config.check_period == 0:
            purification_check(net, usable, r_t, config.chunk_size)
        active = [b for b in usable if not b.skip]

        if config.update_mode == FULL_BATCH:
            grads, outputs = accumulate_gradients(net, active, config.chunk_size)
            mse, err = _errors(outputs, active)
            if prev_mse is not None:
                lr = adapt_learning_rate(prev_mse, mse, lr, config)
            lr_used = lr
        else:
            # outputs are taken just before each beat's own update
            lr_used = lr
            outputs = np.empty((len(active), 2))
            for i in rng.permutation(len(active)):
                b = active[i]
                trace = forward(net, b.samples)
                outputs[i] = trace.outputs
                g = backward(net, trace, targets_for([b.record_label])[0])
                net = apply_update(net, g, lr)
            mse, err = _errors(outputs, active)
            if prev_mse is not None:
                lr = adapt_learning_rate(prev_mse, mse, lr, config)

        skipped = sum(b.skip for b in usable)
        history.records.append(IterationRecord(t, mse, err, lr_used, skipped, r_t))
        log.debug("iter %d mse %.5f err %.4f lr %.3g skipped %d R %.1f",
                  t, mse, err, lr_used, skipped, r_t)
        if err <= config.min_train_error:
            history.stop_reason = "min train error"
            return net, history
        if config.update_mode == FULL_BATCH:
            net = apply_update(net, grads, lr)
        prev_mse = mse
    history.stop_reason = "iteration budget"
    return net, history
