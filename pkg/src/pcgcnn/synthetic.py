"""Synthetic heart-sound beats and recordings for tests and demos.

Normal beats carry an S1 and a weaker S2 burst over a quiet background.
Abnormal beats add a slower systolic murmur burst between them. Both are
built from Gaussian-windowed sinusoids with random jitter and additive noise.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .network import LABEL_A, LABEL_N, Beat
from .signal import Record, RecordingMeta, normalize_beat

__all__ = ["beat_waveform", "make_beats", "make_records", "make_recording"]


# burst phases are fixed relative to each burst centre, as S1/S2 shapes repeat
PHASE_S1 = 0.5 * np.pi
PHASE_S2 = 0.0
PHASE_MURMUR = 0.5 * np.pi


def _burst(t, center, width, freq, phase=0.0):
    return np.exp(-0.5 * ((t - center) / width) ** 2) * np.sin(2 * np.pi * freq * (t - center) + phase)


def beat_waveform(kind: str, length: int, rng: np.random.Generator,
                  noise: float = 0.05, scale_range=(0.5, 2.0)) -> np.ndarray:
    """One raw beat of ``length`` samples over a unit time axis."""
    t = np.linspace(0.0, 1.0, length, endpoint=False)
    jitter = rng.normal(0.0, 0.01, 2)
    s1 = 0.35 + jitter[0]
    s2 = 0.65 + jitter[1]
    x = _burst(t, s1, 0.025, 18.0, PHASE_S1)
    x += rng.uniform(0.45, 0.6) * _burst(t, s2, 0.02, 24.0, PHASE_S2)
    if kind == LABEL_A:
        x += rng.uniform(0.35, 0.5) * _burst(t, 0.5 * (s1 + s2), 0.05, 9.0, PHASE_MURMUR)
    elif kind != LABEL_N:
        raise ValueError("kind must be 'N' or 'A'")
    x *= rng.uniform(*scale_range)
    x += rng.normal(0.0, noise, length)
    return x


def make_beats(n_normal: int, n_abnormal: int, length: int = 200, seed: int = 0,
               noise: float = 0.05) -> list[Beat]:
    """Shuffled normalized beats; each beat's record label equals its morphology."""
    rng = np.random.default_rng(seed)
    kinds = [LABEL_N] * n_normal + [LABEL_A] * n_abnormal
    rng.shuffle(kinds)
    beats = []
    for i, kind in enumerate(kinds):
        nb = normalize_beat(beat_waveform(kind, length, rng, noise))
        beats.append(Beat(nb.samples, "syn%05d" % i, kind, degenerate=nb.degenerate))
    return beats


def make_records(n_normal: int, n_abnormal: int, beats_per_record: int = 10,
                 length: int = 200, seed: int = 0, inject_fraction: float = 0.0,
                 noise: float = 0.05) -> tuple[list[Record], dict[int, str]]:
    """Labelled records of beats; A records may hide N-morphology beats.

    ``inject_fraction`` of the beats in every A record get the normal
    morphology while keeping the record's A label. Returns the records and a
    map from ``id(beat)`` to the beat's true morphology.
    """
    rng = np.random.default_rng(seed)
    labels = [LABEL_N] * n_normal + [LABEL_A] * n_abnormal
    rng.shuffle(labels)
    records, truth = [], {}
    n_inject = int(round(inject_fraction * beats_per_record))
    for r, label in enumerate(labels):
        rid = "rec%04d" % r
        kinds = [label] * beats_per_record
        if label == LABEL_A and n_inject:
            for j in rng.choice(beats_per_record, n_inject, replace=False):
                kinds[j] = LABEL_N
        beats = []
        for kind in kinds:
            nb = normalize_beat(beat_waveform(kind, length, rng, noise))
            b = Beat(nb.samples, rid, label, degenerate=nb.degenerate)
            truth[id(b)] = kind
            beats.append(b)
        records.append(Record(rid, label, beats))
    return records, truth


def make_recording(kind: str, n_beats: int = 8, sample_rate: float = 4000.0,
                   beat_seconds: float = 1.0, noise: float = 0.01, seed: int = 0,
                   record_id: Optional[str] = None) -> RecordingMeta:
    """A continuous recording of consecutive beats, scaled into [-1, 1]."""
    rng = np.random.default_rng(seed)
    n = int(round(beat_seconds * sample_rate))
    x = np.concatenate([beat_waveform(kind, n, rng, 0.0, (0.9, 1.1)) / 2.5 for _ in range(n_beats)])
    x += rng.normal(0.0, noise, x.size)
    x = np.clip(x / max(1.0, np.abs(x).max()), -1.0, 1.0)
    return RecordingMeta(record_id or "syn-%s" % kind, sample_rate, kind, x)
