"""Beat preparation and SNR-based record curation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .network import LABEL_A, LABEL_N, Beat

__all__ = [
    "RecordingMeta",
    "Record",
    "SnrEstimate",
    "SegmenterConfig",
    "SegmentationError",
    "NormalizedBeat",
    "normalize_beat",
    "resample_beat",
    "segment_record",
    "prepare_beats",
    "prepare_record",
    "estimate_beat_noise_variance",
    "estimate_record_snr",
    "curate_datasets",
]

log = logging.getLogger(__name__)


class SegmentationError(ValueError):
    pass


@dataclass
class RecordingMeta:
    record_id: str
    sample_rate: float
    label: Optional[str]  # None when unknown (e.g. a file to classify)
    samples: np.ndarray
    beat_boundaries: Optional[list[tuple[int, int]]] = None

    def __post_init__(self):
        if self.label not in (LABEL_N, LABEL_A, None):
            raise ValueError("record %s: label must be N or A, got %r" % (self.record_id, self.label))
        if self.beat_boundaries is not None:
            _check_boundaries(self.beat_boundaries, len(self.samples), self.record_id)


def _check_boundaries(bounds, n, record_id=""):
    last_end = 0
    for start, end in bounds:
        if not 0 <= start < end <= n:
            raise ValueError("record %s: boundary (%d, %d) outside 0..%d"
                             % (record_id, start, end, n))
        if start < last_end:
            raise ValueError("record %s: boundaries are not increasing at (%d, %d)"
                             % (record_id, start, end))
        last_end = end


@dataclass
class Record:
    """A record reduced to fixed-length normalized beats."""
    record_id: str
    label: str
    beats: list[Beat] = field(default_factory=list)
    noise_variance: float = float("nan")


@dataclass(frozen=True)
class SnrEstimate:
    beat_noise_variances: tuple[float, ...]
    noise_variance: float
    snr_db: Optional[float] = None


@dataclass(frozen=True)
class SegmenterConfig:
    smoothing_s: float = 0.050
    threshold_ratio: float = 0.30
    min_beat_s: float = 0.25
    max_beat_s: float = 1.0
    # relative slack on the beat-length span for detection jitter
    span_slack: float = 0.05


class NormalizedBeat(NamedTuple):
    samples: np.ndarray
    degenerate: bool


def normalize_beat(raw) -> NormalizedBeat:
    """Map min to -1 and max to +1 linearly.

    A constant beat cannot be scaled; it comes back as zeros with
    ``degenerate=True``.
    """
    p = np.asarray(raw, dtype=np.float64)
    if p.size == 0:
        raise ValueError("cannot normalize an empty beat")
    lo, hi = p.min(), p.max()
    if hi == lo:
        return NormalizedBeat(np.zeros_like(p), True)
    out = 2.0 * (p - lo) / (hi - lo) - 1.0
    # pin the extremes; rounding can leave them one ulp off
    out[p == lo] = -1.0
    out[p == hi] = 1.0
    return NormalizedBeat(out, False)


def resample_beat(samples, target_length: int = 1000) -> np.ndarray:
    """Linear interpolation onto ``target_length`` points spanning the beat."""
    p = np.asarray(samples, dtype=np.float64)
    if p.size < 2:
        raise ValueError("need at least 2 samples to resample, got %d" % p.size)
    if target_length < 2:
        raise ValueError("target_length must be >= 2")
    pos = np.linspace(0.0, p.size - 1, target_length)
    out = np.interp(pos, np.arange(p.size), p)
    out[0], out[-1] = p[0], p[-1]
    return out


def _envelope(x, fs, smoothing_s):
    win = max(1, int(round(smoothing_s * fs)))
    kernel = np.ones(win) / win
    return np.convolve(x * x, kernel, mode="same")


def segment_record(recording: RecordingMeta,
                   config: SegmenterConfig = SegmenterConfig()) -> list[tuple[int, int]]:
    """Split a recording into beats with a squared-amplitude envelope detector.

    The strongest point of every supra-threshold envelope run is taken as an
    S1 anchor. Boundaries sit half-way between consecutive anchors; the outer
    boundaries are extrapolated by half the neighbouring interval when that
    stays inside the recording. Beats outside the physiological length span
    are dropped. Externally supplied boundaries bypass detection entirely.
    """
    if recording.beat_boundaries is not None:
        return list(recording.beat_boundaries)
    x = np.asarray(recording.samples, dtype=np.float64)
    fs = float(recording.sample_rate)
    env = _envelope(x - x.mean() if x.size else x, fs, config.smoothing_s)
    if x.size == 0 or env.max() <= 0:
        raise SegmentationError("record %s: no heart-sound activity found; supply beat "
                                "boundaries externally" % recording.record_id)
    above = env > config.threshold_ratio * env.max()
    edges = np.flatnonzero(np.diff(np.r_[0, above.astype(np.int8), 0]))
    starts, ends = edges[::2], edges[1::2]
    anchors = [s + int(np.argmax(env[s:e])) for s, e in zip(starts, ends)]
    # runs closer than the shortest beat belong to one sound (S1 then S2)
    min_gap = config.min_beat_s * fs * (1.0 - config.span_slack)
    merged: list[int] = []
    for a in anchors:
        if merged and a - merged[-1] < min_gap:
            if env[a] > env[merged[-1]]:
                merged[-1] = a
            continue
        merged.append(a)
    if len(merged) < 2:
        raise SegmentationError("record %s: found %d heart-sound anchor(s), need at least 2; "
                                "supply beat boundaries externally"
                                % (recording.record_id, len(merged)))
    anchors_arr = np.asarray(merged)
    mids = (anchors_arr[:-1] + anchors_arr[1:]) // 2
    bounds = list(mids)
    first = anchors_arr[0] - (anchors_arr[1] - anchors_arr[0]) // 2
    last = anchors_arr[-1] + (anchors_arr[-1] - anchors_arr[-2]) // 2
    if first >= 0:
        bounds.insert(0, first)
    if last <= x.size:
        bounds.append(last)
    lo = config.min_beat_s * fs * (1.0 - config.span_slack)
    hi = config.max_beat_s * fs * (1.0 + config.span_slack)
    beats = [(int(s), int(e)) for s, e in zip(bounds[:-1], bounds[1:]) if lo <= e - s <= hi]
    log.debug("record %s: %d anchors, %d beats kept", recording.record_id, len(merged), len(beats))
    return beats


def estimate_beat_noise_variance(samples, quiet_fraction: float = 0.20) -> float:
    """Variance of the leading ``quiet_fraction`` of a beat (diastolic noise floor)."""
    p = np.asarray(samples, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty beat")
    if not 0.0 < quiet_fraction <= 1.0:
        raise ValueError("quiet_fraction must be in (0, 1]")
    n = max(1, int(round(quiet_fraction * p.size)))
    return float(np.var(p[:n]))


def estimate_record_snr(beats: Sequence, signal_variance: Optional[float] = None,
                        quiet_fraction: float = 0.20) -> SnrEstimate:
    """Average the per-beat noise variances; give SNR in dB if signal power is known."""
    if not len(beats):
        raise ValueError("need at least one beat")
    per_beat = tuple(estimate_beat_noise_variance(b, quiet_fraction) for b in beats)
    noise = float(np.mean(per_beat))
    snr = None
    if signal_variance is not None:
        snr = 10.0 * np.log10(signal_variance / noise) if noise > 0 else float("inf")
    return SnrEstimate(per_beat, noise, snr)


def curate_datasets(records: Sequence, top_k: int, bottom_k: int,
                    key=lambda r: r.noise_variance) -> tuple[list, list]:
    """Rank records by ascending noise variance; return (high-SNR, low-SNR) sets.

    Ties keep their input order.
    """
    if top_k < 0 or bottom_k < 0:
        raise ValueError("top_k and bottom_k must be non-negative")
    if top_k + bottom_k > len(records):
        raise ValueError("top_k + bottom_k = %d exceeds %d records"
                         % (top_k + bottom_k, len(records)))
    ranked = sorted(records, key=key)
    high = ranked[:top_k]
    low = ranked[len(ranked) - bottom_k:] if bottom_k else []
    return high, low


def prepare_beats(samples, bounds, input_length: int = 1000):
    """Cut, resample and normalize beats; also return each raw beat's noise variance."""
    x = np.asarray(samples, dtype=np.float64)
    out = []
    for start, end in bounds:
        raw = x[start:end]
        nb = normalize_beat(resample_beat(raw, input_length))
        out.append((nb, estimate_beat_noise_variance(raw)))
    return out


def prepare_record(recording: RecordingMeta, input_length: int = 1000,
                   segmenter: SegmenterConfig = SegmenterConfig()) -> Record:
    """Segment (unless boundaries are given), resample and normalize one recording."""
    bounds = segment_record(recording, segmenter)
    beats = []
    for (nb, noise) in prepare_beats(recording.samples, bounds, input_length):
        beats.append(Beat(nb.samples, recording.record_id, recording.label,
                          raw_noise_variance=noise, degenerate=nb.degenerate))
    noise = float(np.mean([b.raw_noise_variance for b in beats])) if beats else float("nan")
    return Record(recording.record_id, recording.label, beats, noise)
