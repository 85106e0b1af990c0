import numpy as np
import pytest

from pcgcnn.complexity import count_operations, format_report
from pcgcnn.network import NetworkConfig

from _oracles import toy_config

# hand arithmetic for the 1000/41/4 config with 24 neurons per layer:
# layer  conn  sl    xl   wl
#   1     24  1000  960   41
#   2    576   240  200   41
#   3    576    50   10   41
HAND = {
    "fp_mul": [24 * 1000 * 1681, 576 * 240 * 1681, 576 * 50 * 1681],
    "fp_add": [24 * 1000, 576 * 240, 576 * 50],
    "bp1_mul": [24 * 960 * 1681, 576 * 200 * 1681, 576 * 10 * 1681],
    "bp1_add": [24 * 960, 576 * 200, 576 * 10],
    "bp2_mul": [24 * 41 * 921600, 576 * 41 * 40000, 576 * 41 * 100],
    "bp2_add": [24 * 41, 576 * 41, 576 * 41],
}


def test_default_config_matches_hand_arithmetic():
    rep = count_operations(NetworkConfig())
    for name, values in HAND.items():
        assert [getattr(op, name) for op in rep.layers] == values, name
    assert rep.layers[0].fp_mul == 40_344_000
    assert HAND["fp_add"] == [24_000, 138_240, 28_800]


def test_totals_are_sums():
    rep = count_operations(NetworkConfig())
    t = rep.totals
    for name, values in HAND.items():
        assert t[name] == sum(values)
    assert t["iteration_mul"] == t["fp_mul"] + t["bp1_mul"] + t["bp2_mul"]


def test_unit_kernel_layer():
    cfg = NetworkConfig(input_length=10, cnn_hidden_layers=1, mlp_hidden_layers=0,
                        neurons_per_hidden_layer=1, kernel_size=1, subsample_factor=1)
    rep = count_operations(cfg, instrument=True)
    assert (rep.layers[0].fp_mul, rep.layers[0].fp_add) == (10, 10)
    assert rep.instrumented["fp"][0][0] == 10


@pytest.mark.parametrize("n_cnn", [1, 2, 3])
def test_instrumented_counts_match_mac_arithmetic(n_cnn):
    cfg = toy_config(cnn_layers=n_cnn)
    rep = count_operations(cfg, instrument=True)
    for l, op in enumerate(rep.layers):
        conn = op.n_in * op.n_out
        assert rep.instrumented["fp"][l][0] == conn * op.pre_length * op.kernel_size
        assert rep.instrumented["bp_weight"][l][0] == conn * op.pre_length * op.kernel_size
        expected_delta = 0 if l == 0 else conn * op.in_length * op.kernel_size
        assert rep.instrumented["bp_delta"][l][0] == expected_delta


def test_report_text_mentions_layer_one_value():
    assert "40344000" in format_report(count_operations(NetworkConfig()))
