import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcgcnn.network import Beat, Network, NetworkConfig, build_network, forward, targets_for
from pcgcnn.synthetic import make_beats
from pcgcnn.training import (
    FULL_BATCH,
    GradientSet,
    TrainConfig,
    accumulate_gradients,
    adapt_learning_rate,
    apply_update,
    backward,
    mse_loss,
    purification_check,
    threshold_schedule,
    train,
)

from _oracles import fd_gradient, gradient_mismatch, toy_config

SMALL = NetworkConfig(input_length=200, cnn_hidden_layers=3, mlp_hidden_layers=2,
                      neurons_per_hidden_layer=8, kernel_size=9, subsample_factor=4)


# --- loss -------------------------------------------------------------------

def test_mse_examples():
    assert mse_loss([0.3, -0.2], [0.3, -0.2]) == 0
    assert mse_loss([1, -1], [-1, 1]) == 8
    assert mse_loss([0.5, -0.5], [1, -1]) == pytest.approx(0.5)


# magnitudes below ~1e-150 square to zero in float64, so keep clear of underflow
no_underflow = st.floats(-5, 5).filter(lambda v: v == 0 or abs(v) > 1e-100)


@given(arrays(np.float64, 2, elements=no_underflow), arrays(np.float64, 2, elements=no_underflow))
def test_T6_loss_floor(y, t):
    e = mse_loss(y, t)
    assert e >= 0
    assert (e == 0) == bool(np.all(y == t))


# --- gradients ----------------------------------------------------------------

@pytest.mark.parametrize("n_cnn,n_mlp,seed", [(1, 0, 0), (2, 1, 1), (3, 2, 2)])
def test_T1_gradient_matches_finite_differences(n_cnn, n_mlp, seed):
    net = build_network(toy_config(n_cnn, n_mlp), seed)
    rng = np.random.default_rng(seed + 100)
    beat = rng.uniform(-1, 1, 32)
    target = targets_for(["A" if seed % 2 else "N"])[0]
    g = backward(net, forward(net, beat), target).flat()
    assert gradient_mismatch(g, fd_gradient(net, beat, target)) <= 1.0


def test_single_weight_hand_calculus():
    cfg = NetworkConfig(input_length=1, cnn_hidden_layers=1, mlp_hidden_layers=0,
                        neurons_per_hidden_layer=1, kernel_size=1, subsample_factor=1)
    net = Network(cfg, [np.array([[[0.7]]]), np.array([[[1.0], [0.0]]])],
                  [np.array([0.0]), np.array([0.0, 0.0])])
    s, t = 0.4, np.array([1.0, -1.0])
    h = math.tanh(0.7 * s)
    y1, y2 = math.tanh(h), math.tanh(0.0)
    # dE/dw1 = 2(y1 - t1) f'(x_out) * 1.0 * f'(x_hidden) * s; y2 has zero weight into h
    expected = 2 * (y1 - t[0]) * (1 - y1 ** 2) * (1 - h ** 2) * s
    g = backward(net, forward(net, [s]), t)
    assert g.weights[0][0, 0, 0] == pytest.approx(expected, rel=1e-12)
    assert g.weights[1][0, 0, 0] == pytest.approx(2 * (y1 - t[0]) * (1 - y1 ** 2) * h, rel=1e-12)
    assert g.weights[1][0, 1, 0] == pytest.approx(2 * (y2 - t[1]) * h, rel=1e-12)


def test_zero_residual_gives_zero_gradients():
    net = build_network(toy_config(2), 0)
    beat = np.linspace(-1, 1, 32)
    g = backward(net, forward(net, beat), forward(net, beat).outputs)
    assert not np.any(g.flat())


def test_batched_backward_is_sum_of_singles():
    net = build_network(toy_config(3), 5)
    rng = np.random.default_rng(1)
    beats = rng.uniform(-1, 1, (6, 32))
    targets = targets_for(list("NANNAA"))
    batch = backward(net, forward(net, beats), targets).flat()
    single = sum(backward(net, forward(net, b), t).flat() for b, t in zip(beats, targets))
    np.testing.assert_allclose(batch, single, rtol=1e-12, atol=1e-14)


def test_backward_rejects_foreign_trace():
    a = build_network(toy_config(1), 0)
    b = build_network(toy_config(2), 0)
    with pytest.raises(ValueError):
        backward(b, forward(a, np.zeros(32)), [1, -1])


# --- updates ------------------------------------------------------------------

def test_update_examples():
    net = build_network(toy_config(1), 0)
    g = backward(net, forward(net, np.ones(32)), [1, -1])
    same = apply_update(net, g, 0.0)
    assert same.flat_parameters().tobytes() == net.flat_parameters().tobytes()
    one = GradientSet.zeros_for(net)
    one.weights[0][0, 0, 0] = 2.0
    w0 = net.weights[0].copy()
    w0[0, 0, 0] = 1.0
    upd = apply_update(Network(net.config, [w0] + net.weights[1:], net.biases), one, 0.1)
    assert upd.weights[0][0, 0, 0] == pytest.approx(0.8)


def test_small_step_descends():
    net = build_network(toy_config(2), 3)
    beat, t = np.random.default_rng(0).uniform(-1, 1, 32), np.array([-1.0, 1.0])
    g = backward(net, forward(net, beat), t)
    before = mse_loss(forward(net, beat).outputs, t)
    after = mse_loss(forward(apply_update(net, g, 1e-4), beat).outputs, t)
    assert after < before


def test_learning_rate_rule():
    assert adapt_learning_rate(1.0, 0.9, 0.001) == pytest.approx(0.00105)
    assert adapt_learning_rate(0.9, 1.0, 0.001) == pytest.approx(0.0007)
    assert adapt_learning_rate(0.5, 0.5, 0.001) == pytest.approx(0.0007)
    with pytest.raises(ValueError):
        adapt_learning_rate(1, 1, 0.0)


def test_threshold_examples():
    assert threshold_schedule(0) == 95
    assert threshold_schedule(45) == 50
    assert threshold_schedule(200) == 50


@given(st.integers(0, 500), st.floats(0, 100), st.floats(0, 100), st.floats(0, 5))
def test_T5_schedule(t, a, b, slope):
    floor, start = min(a, b), max(a, b)
    cfg = TrainConfig(threshold_initial=start, threshold_floor=floor, threshold_slope=slope)
    assert threshold_schedule(t + 1, cfg) <= threshold_schedule(t, cfg)
    assert threshold_schedule(t, cfg) >= floor


@pytest.mark.parametrize("kwargs", [dict(lr_up=0.9), dict(lr_down=1.2), dict(check_period=0),
                                    dict(threshold_floor=96), dict(update_mode="minibatch")])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


# --- purification -------------------------------------------------------------

def _fixed_cl_net(cl):
    """Linear toy net whose CL(N) is ``cl`` for every input."""
    cfg = NetworkConfig(input_length=1, cnn_hidden_layers=1, mlp_hidden_layers=0,
                        neurons_per_hidden_layer=1, kernel_size=1, subsample_factor=1,
                        activation="linear")
    return Network(cfg, [np.zeros((1, 1, 1)), np.zeros((1, 2, 1))],
                   [np.zeros(1), np.array([cl / 100.0, -cl / 100.0])])


@pytest.mark.parametrize("cl,R,label,skip", [(60, 50, "A", True), (50, 50, "A", False),
                                             (99, 50, "N", False)])
def test_purification_rule(cl, R, label, skip):
    b = Beat(np.zeros(1), "r", label)
    purification_check(_fixed_cl_net(cl), [b], R)
    assert b.skip is skip


def test_purification_recomputes_marks():
    b = Beat(np.zeros(1), "r", "A", skip=True)
    purification_check(_fixed_cl_net(10), [b], 50)
    assert b.skip is False


@given(st.floats(0, 100), st.floats(0, 100), st.integers(0, 1000))
def test_T3_raising_R_never_adds_skips(r1, r2, seed):
    lo, hi = min(r1, r2), max(r1, r2)
    net = build_network(toy_config(2), seed)
    beats = [Beat(x, "r", "A") for x in np.random.default_rng(seed).uniform(-1, 1, (12, 32))]
    m_lo = purification_check(net, beats, lo)
    m_hi = purification_check(net, beats, hi)
    assert np.all(m_hi <= m_lo)


@given(st.integers(0, 1000), st.lists(st.booleans(), min_size=8, max_size=8))
def test_T2_skipped_equals_removed(seed, mask):
    net = build_network(toy_config(2), seed)
    rng = np.random.default_rng(seed)
    beats = [Beat(x, "r%d" % i, "NA"[i % 2], skip=m)
             for i, (x, m) in enumerate(zip(rng.uniform(-1, 1, (8, 32)), mask))]
    kept = [Beat(b.samples, b.record_id, b.record_label) for b in beats if not b.skip]
    g_skip, _ = accumulate_gradients(net, beats)
    g_kept, _ = accumulate_gradients(net, kept)
    assert g_skip.flat().tobytes() == g_kept.flat().tobytes()


# --- training loop ------------------------------------------------------------

def test_train_errors():
    net = build_network(SMALL, 0)
    with pytest.raises(ValueError, match="empty"):
        train(net, [])
    with pytest.raises(ValueError, match="both"):
        train(net, [b for b in make_beats(5, 5, seed=1) if b.record_label == "N"])


def test_zero_budget():
    net = build_network(SMALL, 0)
    out, hist = train(net, make_beats(3, 3), TrainConfig(max_iterations=0))
    assert len(hist) == 0 and hist.stop_reason == "iteration budget"
    assert out.flat_parameters().tobytes() == net.flat_parameters().tobytes()


@pytest.mark.parametrize("mode", ["per-beat", FULL_BATCH])
def test_T4_reproducible(mode):
    beats = make_beats(20, 20, seed=3)
    cfg = TrainConfig(max_iterations=6, update_mode=mode, seed=7, min_train_error=0.0)
    a_net, a = train(build_network(SMALL, 1), beats, cfg)
    b_net, b = train(build_network(SMALL, 1), beats, cfg)
    assert a.to_csv() == b.to_csv()
    assert a_net.flat_parameters().tobytes() == b_net.flat_parameters().tobytes()


def test_history_columns_and_lr_adaptation():
    beats = make_beats(20, 20, seed=4)
    _, hist = train(build_network(SMALL, 2), beats, TrainConfig(max_iterations=5, min_train_error=0.0))
    assert hist.to_csv().splitlines()[0] == "iter,mse,class_err,lr,skipped,r_t"
    mse, lr = hist.column("mse"), hist.column("lr")
    for i in range(1, len(hist) - 1):
        factor = 1.05 if mse[i] < mse[i - 1] else 0.70
        assert lr[i + 1] == pytest.approx(lr[i] * factor)


def test_purification_is_inert_on_clean_data():
    # a near-zero network never clears R, so both runs see identical beats
    beats = make_beats(15, 15, seed=5)
    cfg = NetworkConfig(**{**SMALL.__dict__, "weight_init_half_range": 1e-6})
    on = TrainConfig(max_iterations=6, min_train_error=0.0, initial_learning_rate=1e-9)
    a_net, a = train(build_network(cfg, 0), beats, on)
    b_net, b = train(build_network(cfg, 0), beats, replace(on, purification_enabled=False))
    assert a.column("skipped").sum() == 0
    assert a.to_csv() == b.to_csv()
    assert a_net.flat_parameters().tobytes() == b_net.flat_parameters().tobytes()


def test_separable_training_reaches_error_floor():
    beats = make_beats(100, 100, seed=11)
    _, hist = train(build_network(SMALL, 0), beats, TrainConfig())
    assert hist.records[-1].class_err <= 0.08
    assert hist.stop_reason == "min train error"


def test_degenerate_beats_are_ignored():
    beats = make_beats(5, 5, seed=2) + [Beat(np.zeros(200), "dead", "N", degenerate=True)]
    _, hist = train(build_network(SMALL, 0), beats, TrainConfig(max_iterations=1))
    assert len(hist) == 1
