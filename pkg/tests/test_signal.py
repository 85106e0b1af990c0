import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcgcnn.signal import (
    Record,
    RecordingMeta,
    SegmentationError,
    curate_datasets,
    estimate_beat_noise_variance,
    estimate_record_snr,
    normalize_beat,
    prepare_record,
    resample_beat,
    segment_record,
)
from pcgcnn.synthetic import make_recording

moderate = st.floats(-1e3, 1e3, allow_nan=False)


def test_normalize_examples():
    np.testing.assert_array_equal(normalize_beat([0, 5, 10]).samples, [-1, 0, 1])
    np.testing.assert_array_equal(normalize_beat([-2, 0, 2]).samples, [-1, 0, 1])
    out = normalize_beat([7, 7, 7])
    np.testing.assert_array_equal(out.samples, [0, 0, 0])
    assert out.degenerate


def _spread(v):
    return v.max() - v.min() > 1e-6 * max(1.0, np.abs(v).max())


@given(arrays(np.float64, st.integers(2, 50), elements=moderate))
def test_S1_range(v):
    assume(_spread(v))
    out = normalize_beat(v)
    assert out.samples.min() == -1.0 and out.samples.max() == 1.0 and not out.degenerate


@given(arrays(np.float64, st.integers(2, 50), elements=moderate))
def test_S2_idempotent(v):
    assume(_spread(v))
    once = normalize_beat(v).samples
    np.testing.assert_allclose(normalize_beat(once).samples, once, atol=1e-12)


@given(arrays(np.float64, st.integers(2, 50), elements=st.floats(-10, 10)),
       st.floats(0.1, 100), st.floats(-50, 50))
def test_S3_amplitude_invariance(v, alpha, c):
    assume(v.max() - v.min() > 1e-3)
    np.testing.assert_allclose(normalize_beat(alpha * v + c).samples, normalize_beat(v).samples,
                               atol=1e-12)


def test_resample_examples():
    x = np.random.default_rng(0).standard_normal(2000)
    out = resample_beat(x, 1000)
    assert out.shape == (1000,) and out[0] == x[0] and out[-1] == x[-1]
    np.testing.assert_array_equal(resample_beat(np.full(37, 2.5)), np.full(1000, 2.5))
    np.testing.assert_allclose(resample_beat([0.0, 1.0]), np.linspace(0, 1, 1000), atol=1e-15)
    with pytest.raises(ValueError):
        resample_beat([1.0])


@given(st.integers(2, 3000), st.integers(2, 1500), st.floats(-5, 5), st.floats(-5, 5))
def test_S4_linear_fidelity(n, m, a, b):
    src = a * np.arange(n) + b
    out = resample_beat(src, m)
    pos = np.linspace(0, n - 1, m)
    np.testing.assert_allclose(out, a * pos + b, atol=1e-12 * max(1.0, abs(a) * n + abs(b)))


def _burst_train():
    fs, n = 4000, int(4.8 * 4000)
    t = np.arange(n) / fs
    x = np.zeros(n)
    for c in (0.25, 1.25, 2.25, 3.25, 4.25):
        x += np.exp(-0.5 * ((t - c) / 0.01) ** 2) * np.sin(2 * np.pi * 60 * (t - c))
    return RecordingMeta("bursts", fs, "N", x)


def test_segmenter_on_burst_train():
    bounds = segment_record(_burst_train())
    assert len(bounds) == 4
    for s, e in bounds:
        assert abs((e - s) - 4000) <= 40


def test_segmenter_silence_and_bypass():
    with pytest.raises(SegmentationError, match="boundaries"):
        segment_record(RecordingMeta("quiet", 4000, "N", np.zeros(8000)))
    given_bounds = [(0, 1000), (1000, 2500)]
    rec = RecordingMeta("x", 4000, "N", np.zeros(8000), given_bounds)
    assert segment_record(rec) == given_bounds


def test_segmenter_on_synthetic_recording():
    rec = make_recording("A", n_beats=8, seed=3)
    bounds = segment_record(rec)
    assert len(bounds) >= 6
    assert all(1000 <= e - s <= 4200 for s, e in bounds)


def test_boundary_validation():
    with pytest.raises(ValueError):
        RecordingMeta("x", 4000, "N", np.zeros(100), [(0, 50), (40, 90)])
    with pytest.raises(ValueError):
        RecordingMeta("x", 4000, "N", np.zeros(100), [(0, 101)])
    with pytest.raises(ValueError):
        RecordingMeta("x", 4000, "U", np.zeros(100))


def test_noise_variance_examples():
    beat = np.r_[np.full(20, 3.0), np.random.default_rng(0).standard_normal(80)]
    assert estimate_beat_noise_variance(beat) == 0.0
    alt = np.r_[np.tile([-1.0, 1.0], 10), np.zeros(80)]
    assert estimate_beat_noise_variance(alt) == pytest.approx(1.0)
    x = np.random.default_rng(1).standard_normal(57)
    assert estimate_beat_noise_variance(x, 1.0) == pytest.approx(np.var(x))


@pytest.mark.parametrize("ratio,db", [(10.0, 10.0), (0.25, -6.0206), (0.125, -9.0309)])
def test_snr_examples(ratio, db):
    rng = np.random.default_rng(0)
    beats = [np.r_[np.tile([-1.0, 1.0], 10), rng.standard_normal(80)] for _ in range(3)]
    est = estimate_record_snr(beats, signal_variance=ratio * 1.0)
    assert est.noise_variance == pytest.approx(1.0)
    assert est.snr_db == pytest.approx(db, abs=1e-3)


@given(st.lists(arrays(np.float64, 30, elements=st.floats(-5, 5)), min_size=1, max_size=6))
def test_snr_average_is_mean_of_beats(beats):
    est = estimate_record_snr(beats)
    assert est.noise_variance == pytest.approx(np.mean(est.beat_noise_variances))


def _records(noise):
    return [Record("r%d" % i, "N", [], v) for i, v in enumerate(noise)]


def test_curation_examples():
    recs = _records([3, 1, 5, 2, 4])
    high, low = curate_datasets(recs, 2, 2)
    assert [r.noise_variance for r in high] == [1, 2]
    assert [r.noise_variance for r in low] == [4, 5]
    assert len(curate_datasets(recs, 5, 0)[0]) == 5
    with pytest.raises(ValueError):
        curate_datasets(recs, 3, 3)


def test_curation_large_split():
    recs = _records(np.random.default_rng(0).random(3153))
    high, low = curate_datasets(recs, 1200, 1008)
    assert (len(high), len(low)) == (1200, 1008)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.data())
def test_S5_disjoint(noise, data):
    n = len(noise)
    top = data.draw(st.integers(0, n))
    bottom = data.draw(st.integers(0, n - top))
    high, low = curate_datasets(_records(noise), top, bottom)
    assert not {r.record_id for r in high} & {r.record_id for r in low}


def test_prepare_record():
    rec = prepare_record(make_recording("N", n_beats=6, seed=1, record_id="p1"), input_length=200)
    assert rec.record_id == "p1" and rec.label == "N" and len(rec.beats) >= 4
    for b in rec.beats:
        assert b.samples.shape == (200,) and b.samples.max() == 1.0 and b.samples.min() == -1.0
    assert rec.noise_variance == pytest.approx(np.mean([b.raw_noise_variance for b in rec.beats]))
