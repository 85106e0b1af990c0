"""Confusion matrices, record-level majority rule, cross-validation and T_a sweeps.

Abnormal (A) is the positive class throughout.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .network import LABEL_A, LABEL_N, NetworkConfig, build_network, classify_batch
from .training import TrainConfig, train

__all__ = [
    "ConfusionMatrix",
    "Metrics",
    "SweepPoint",
    "CvPlan",
    "RecordOutcome",
    "CvResult",
    "REFERENCE_POINTS",
    "accumulate",
    "metrics",
    "record_decision",
    "a_fraction",
    "kfold_split",
    "cross_validate",
    "sweep_threshold",
    "curves_csv",
    "derive_seed",
]

log = logging.getLogger(__name__)

# Operating points of the competing feature-ensemble method, transcribed
# for plot overlays; never recomputed here.
REFERENCE_POINTS = {
    "high_snr": {"sen": 0.8967, "spe": 0.8689, "ppr": 0.6970},
    "low_snr": {"sen": 0.8135, "spe": 0.922, "ppr": 0.7795},
}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConfusionMatrix":
        return cls(int(d["tp"]), int(d["tn"]), int(d["fp"]), int(d["fn"]))


def accumulate(cm: ConfusionMatrix, prediction: str, truth: str) -> ConfusionMatrix:
    """Return ``cm`` with the one matching counter incremented."""
    if prediction not in (LABEL_N, LABEL_A) or truth not in (LABEL_N, LABEL_A):
        raise ValueError("labels must be 'N' or 'A', got %r/%r" % (prediction, truth))
    if prediction == LABEL_A:
        return replace(cm, tp=cm.tp + 1) if truth == LABEL_A else replace(cm, fp=cm.fp + 1)
    return replace(cm, fn=cm.fn + 1) if truth == LABEL_A else replace(cm, tn=cm.tn + 1)


@dataclass(frozen=True)
class Metrics:
    """Derived rates; ``None`` where the denominator is zero."""
    acc: Optional[float]
    sen: Optional[float]
    spe: Optional[float]
    ppr: Optional[float]


def _ratio(num, den):
    return num / den if den else None


def metrics(cm: ConfusionMatrix) -> Metrics:
    return Metrics(
        acc=_ratio(cm.tp + cm.tn, cm.total),
        sen=_ratio(cm.tp, cm.tp + cm.fn),
        spe=_ratio(cm.tn, cm.tn + cm.fp),
        ppr=_ratio(cm.tp, cm.tp + cm.fp),
    )


def a_fraction(beat_labels: Sequence[str]) -> float:
    if not len(beat_labels):
        raise ValueError("record has no beats")
    return sum(1 for lab in beat_labels if lab == LABEL_A) / len(beat_labels)


def record_decision(beat_labels: Sequence[str], t_a: float) -> str:
    """A when the share of A beats is strictly above ``t_a``."""
    return LABEL_A if a_fraction(beat_labels) > t_a else LABEL_N


@dataclass(frozen=True)
class SweepPoint:
    t_a: float
    sen: Optional[float]
    spe: Optional[float]
    ppr: Optional[float]
    acc: Optional[float]


@dataclass
class CvPlan:
    k: int
    runs: int
    assignments: dict  # record_id -> fold index
    seed: int

    def test_ids(self, fold: int) -> list:
        return [rid for rid, f in self.assignments.items() if f == fold]

    def train_ids(self, fold: int) -> list:
        return [rid for rid, f in self.assignments.items() if f != fold]


def kfold_split(records: Sequence, k: int = 4, seed: int = 0, runs: int = 10) -> CvPlan:
    """Seeded fold assignment, stratified by record label and done per record."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(records) < k:
        raise ValueError("need at least k=%d records, got %d" % (k, len(records)))
    ids = [r.record_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("record ids must be unique")
    rng = np.random.default_rng(seed)
    assignments = {}
    offset = 0
    for label in (LABEL_N, LABEL_A):
        group = [r.record_id for r in records if r.label == label]
        order = rng.permutation(len(group))
        for pos, idx in enumerate(order):
            assignments[group[idx]] = (offset + pos) % k
        offset += len(group)
    # keep the caller's record order
    return CvPlan(k, runs, {rid: assignments[rid] for rid in ids}, seed)


def derive_seed(master: int, fold: int, run: int) -> int:
    return int(np.random.SeedSequence([master, fold, run]).generate_state(1)[0])


@dataclass(frozen=True)
class RecordOutcome:
    fold: int
    run: int
    record_id: str
    truth: str
    a_fraction: float


@dataclass
class CvResult:
    final: ConfusionMatrix
    folds: list[ConfusionMatrix]
    point: SweepPoint
    outcomes: list[RecordOutcome] = field(default_factory=list)

    @property
    def metrics(self) -> Metrics:
        return metrics(self.final)


# (train_records, fold, run, seed) -> classifier mapping a (B, n) beat array to labels
ClassifierFactory = Callable[[list, int, int, int], Callable[[np.ndarray], list]]


def cnn_classifier_factory(network_config: NetworkConfig, train_config: TrainConfig):
    def factory(train_records, fold, run, seed):
        beats = [b for r in train_records for b in r.beats]
        net, history = train(build_network(network_config, seed), beats,
                             replace(train_config, seed=seed))
        log.info("fold %d run %d: %d iterations, stop: %s", fold, run, len(history),
                 history.stop_reason)
        return lambda samples: classify_batch(net, samples)[0]
    return factory


def _run_job(args):
    records, plan, fold, run, network_config, train_config = args
    by_id = {r.record_id: r for r in records}
    train_records = [by_id[rid] for rid in plan.train_ids(fold)]
    classify = cnn_classifier_factory(network_config, train_config)(
        train_records, fold, run, derive_seed(plan.seed, fold, run))
    return _score(classify, [by_id[rid] for rid in plan.test_ids(fold)], fold, run)


def _score(classify, test_records, fold, run):
    out = []
    for r in test_records:
        usable = [b.samples for b in r.beats if not b.degenerate]
        if not usable:
            log.warning("record %s has no usable beats; left out of scoring", r.record_id)
            continue
        labels = classify(np.stack(usable))
        out.append(RecordOutcome(fold, run, r.record_id, r.label, a_fraction(labels)))
    return out


def cross_validate(records: Sequence, plan: CvPlan, train_config: TrainConfig = TrainConfig(),
                   network_config: NetworkConfig = NetworkConfig(), t_a: float = 0.25,
                   classifier_factory: Optional[ClassifierFactory] = None,
                   workers: int = 1) -> CvResult:
    """Train and test every fold ``plan.runs`` times and accumulate record decisions.

    Run matrices sum into fold matrices, fold matrices into the final one.
    ``classifier_factory`` replaces the CNN, which is useful for plumbing
    checks; ``workers > 1`` runs the default CNN jobs in worker processes.
    """
    by_id = {r.record_id: r for r in records}
    if set(by_id) != set(plan.assignments):
        raise ValueError("plan does not cover exactly the given records")
    for fold in range(plan.k):
        labels = {by_id[rid].label for rid in plan.train_ids(fold)}
        if labels != {LABEL_N, LABEL_A}:
            raise ValueError("fold %d: training partition lacks a class (has %s)"
                             % (fold, sorted(labels)))

    jobs = [(f, r) for f in range(plan.k) for r in range(plan.runs)]
    if classifier_factory is None and workers > 1:
        args = [(list(records), plan, f, r, network_config, train_config) for f, r in jobs]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, args))
    else:
        factory = classifier_factory or cnn_classifier_factory(network_config, train_config)
        results = []
        for f, r in jobs:
            train_records = [by_id[rid] for rid in plan.train_ids(f)]
            classify = factory(train_records, f, r, derive_seed(plan.seed, f, r))
            results.append(_score(classify, [by_id[rid] for rid in plan.test_ids(f)], f, r))

    outcomes = [o for part in results for o in part]
    folds = [ConfusionMatrix() for _ in range(plan.k)]
    for o in outcomes:
        folds[o.fold] = accumulate(folds[o.fold], _decide(o.a_fraction, t_a), o.truth)
    final = sum(folds, ConfusionMatrix())
    return CvResult(final, folds, _point(final, t_a), outcomes)


def _decide(fraction: float, t_a: float) -> str:
    return LABEL_A if fraction > t_a else LABEL_N


def _point(cm: ConfusionMatrix, t_a: float) -> SweepPoint:
    m = metrics(cm)
    return SweepPoint(t_a, m.sen, m.spe, m.ppr, m.acc)


def sweep_threshold(outcomes: Iterable, grid: Sequence[float]) -> list[SweepPoint]:
    """Re-threshold stored A-beat fractions at every ``t_a`` in ``grid``.

    ``outcomes`` holds :class:`RecordOutcome` objects or ``(fraction, truth)`` pairs.
    """
    pairs = [(o.a_fraction, o.truth) if isinstance(o, RecordOutcome) else tuple(o)
             for o in outcomes]
    grid = list(grid)
    if not grid:
        raise ValueError("threshold grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("threshold grid must be ascending")
    points = []
    for t_a in grid:
        cm = ConfusionMatrix()
        for fraction, truth in pairs:
            cm = accumulate(cm, _decide(fraction, t_a), truth)
        points.append(_point(cm, t_a))
    return points


def _fmt(v):
    return "" if v is None else "%.6f" % v


def curves_csv(points: Sequence[SweepPoint], reference: Optional[str] = "high_snr") -> str:
    """CSV text ``t_a,sen,spe,ppr,acc``; undefined metrics are empty fields.

    The transcribed reference operating point, if requested, follows as a
    ``#`` comment line.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t_a", "sen", "spe", "ppr", "acc"])
    for p in points:
        writer.writerow([_fmt(p.t_a), _fmt(p.sen), _fmt(p.spe), _fmt(p.ppr), _fmt(p.acc)])
    if reference is not None:
        ref = REFERENCE_POINTS[reference]
        buf.write("# reference %s (competing method, transcribed, not computed): "
                  "sen=%.4f spe=%.4f ppr=%.4f\n" % (reference, ref["sen"], ref["spe"], ref["ppr"]))
    return buf.getvalue()
