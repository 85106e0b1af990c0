"""Command-line entry point: ``pcgcnn <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .complexity import count_operations, format_report
from .evaluation import (
    REFERENCE_POINTS,
    RecordOutcome,
    cross_validate,
    curves_csv,
    kfold_split,
    record_decision,
    sweep_threshold,
)
from .io import (
    ManifestRow,
    atomic_write_text,
    load_audio,
    load_config,
    load_model,
    read_boundaries,
    read_manifest,
    save_model,
    write_manifest,
)
from .network import build_network, classify_beat
from .signal import (
    Record,
    SegmentationError,
    curate_datasets,
    normalize_beat,
    prepare_record,
    resample_beat,
    segment_record,
)
from .training import train

log = logging.getLogger("pcgcnn")


def _load_row(row: ManifestRow, rate=None):
    rec = load_audio(row.path, rate=rate, label=row.label, record_id=row.record_id)
    if row.boundaries is not None:
        rec = dataclasses.replace(rec, beat_boundaries=read_boundaries(row.boundaries))
    return rec


def load_records(rows, input_length, rate=None) -> list[Record]:
    """Prepare every manifest row; rows that cannot be segmented are skipped with a warning."""
    records = []
    for row in rows:
        try:
            rec = prepare_record(_load_row(row, rate), input_length)
        except SegmentationError as exc:
            log.warning("skipping %s: %s", row.record_id, exc)
            continue
        if not rec.beats:
            log.warning("skipping %s: no beats within the physiological span", row.record_id)
            continue
        records.append(rec)
    return records


def _config_digest(*configs) -> str:
    blob = json.dumps([dataclasses.asdict(c) for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cmd_curate(args):
    rows = read_manifest(args.manifest)
    by_id = {r.record_id: r for r in rows}
    records = load_records(rows, input_length=args.input_length, rate=args.rate)
    high, low = curate_datasets(records, args.top, args.bottom)
    out = Path(args.out)
    ranking = ["record_id,label,noise_variance,n_beats"]
    for r in sorted(records, key=lambda r: r.noise_variance):
        ranking.append("%s,%s,%.9g,%d" % (r.record_id, r.label, r.noise_variance, len(r.beats)))
    atomic_write_text(out / "ranking.csv", "\n".join(ranking) + "\n")
    write_manifest(out / "high_snr.csv", [by_id[r.record_id] for r in high])
    write_manifest(out / "low_snr.csv", [by_id[r.record_id] for r in low])
    for name, part in (("high", high), ("low", low)):
        n_a = sum(r.label == "A" for r in part)
        print("%s-SNR set: %d records (%d N, %d A)" % (name, len(part), len(part) - n_a, n_a))
    return 0


def cmd_train(args):
    net_cfg, train_cfg = load_config(args.config, seed=args.seed)
    records = load_records(read_manifest(args.manifest), net_cfg.input_length, args.rate)
    beats = [b for r in records for b in r.beats]
    log.info("training on %d beats from %d records", len(beats), len(records))
    network, history = train(build_network(net_cfg, train_cfg.seed), beats, train_cfg)
    provenance = {
        "seed": train_cfg.seed,
        "config_digest": _config_digest(net_cfg, train_cfg),
        "train_config": dataclasses.asdict(train_cfg),
        "iterations": len(history),
        "stop_reason": history.stop_reason,
        "version": __version__,
    }
    history_path = args.history or str(args.out) + ".history.csv"
    save_model(network, args.out, provenance)
    atomic_write_text(history_path, history.to_csv())
    print("trained %d iterations (%s); model written to %s"
          % (len(history), history.stop_reason, args.out))
    return 0


def cmd_classify(args):
    network, _ = load_model(args.model)
    rec = load_audio(args.input, rate=args.rate)
    if args.boundaries:
        rec = dataclasses.replace(rec, beat_boundaries=read_boundaries(args.boundaries))
    bounds = segment_record(rec)
    n = network.config.input_length
    labels = []
    out = sys.stdout
    for i, (start, end) in enumerate(bounds):
        t0 = time.perf_counter()
        beat = normalize_beat(resample_beat(rec.samples[start:end], n)).samples
        decision = classify_beat(network, beat, args.threshold)
        latency_us = (time.perf_counter() - t0) * 1e6
        labels.append(decision.label)
        if args.stream:
            out.write("%d,%s,%.2f,%.0f\n" % (i, decision.label, decision.confidence, latency_us))
            out.flush()
        else:
            out.write("%d,%s,%.2f\n" % (i, decision.label, decision.confidence))
    if args.ta is not None:
        if not labels:
            raise ValueError("no beats found in %s" % args.input)
        frac = sum(lab == "A" for lab in labels) / len(labels)
        out.write("record,%s,%.4f\n" % (record_decision(labels, args.ta), frac))
    return 0


def _metrics_dict(point):
    return {"t_a": point.t_a, "acc": point.acc, "sen": point.sen, "spe": point.spe,
            "ppr": point.ppr}


def cmd_evaluate(args):
    net_cfg, train_cfg = load_config(args.config)
    records = load_records(read_manifest(args.manifest), net_cfg.input_length, args.rate)
    plan = kfold_split(records, args.folds, args.seed, runs=args.runs)
    result = cross_validate(records, plan, train_cfg, net_cfg, args.ta, workers=args.workers)
    out = Path(args.out)
    atomic_write_text(out / "cm.json", json.dumps({
        "final": result.final.to_dict(),
        "folds": [cm.to_dict() for cm in result.folds],
    }, indent=2) + "\n")
    atomic_write_text(out / "metrics.json", json.dumps(_metrics_dict(result.point), indent=2) + "\n")
    lines = ["fold,run,record_id,truth,a_fraction"]
    for o in result.outcomes:
        lines.append("%d,%d,%s,%s,%r" % (o.fold, o.run, o.record_id, o.truth, o.a_fraction))
    atomic_write_text(out / "outcomes.csv", "\n".join(lines) + "\n")
    print(json.dumps(_metrics_dict(result.point)))
    return 0


def read_outcomes(path) -> list[RecordOutcome]:
    with open(path, newline="") as fh:
        return [RecordOutcome(int(r["fold"]), int(r["run"]), r["record_id"], r["truth"],
                              float(r["a_fraction"])) for r in csv.DictReader(fh)]


def cmd_sweep(args):
    outcomes = read_outcomes(Path(args.results) / "outcomes.csv")
    grid = np.linspace(args.ta_min, args.ta_max, args.steps)
    points = sweep_threshold(outcomes, grid)
    ref = None if args.reference == "none" else args.reference
    text = curves_csv(points, reference=ref)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_complexity(args):
    net_cfg, _ = load_config(args.config)
    print(format_report(count_operations(net_cfg, instrument=not args.no_instrument)))
    return 0


def cmd_benchmark(args):
    network, _ = load_model(args.model)
    rng = np.random.default_rng(args.seed)
    beats = [normalize_beat(rng.standard_normal(network.config.input_length)).samples
             for _ in range(args.beats)]
    for b in beats[: min(10, len(beats))]:
        classify_beat(network, b)
    times = np.empty(len(beats))
    for i, b in enumerate(beats):
        t0 = time.perf_counter()
        classify_beat(network, b)
        times[i] = time.perf_counter() - t0
    ms = times * 1e3
    print("beats=%d mean_ms=%.4f p50_ms=%.4f p95_ms=%.4f p99_ms=%.4f" % (
        len(beats), ms.mean(), np.percentile(ms, 50), np.percentile(ms, 95),
        np.percentile(ms, 99)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcgcnn", description="PCG anomaly detection with an adaptive 1D CNN")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("curate", help="rank records by noise variance and split high/low SNR sets")
    s.add_argument("--manifest", required=True)
    s.add_argument("--top", type=int, required=True)
    s.add_argument("--bottom", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--rate", type=float, help="sample rate for CSV inputs")
    s.add_argument("--input-length", type=int, default=1000)
    s.set_defaults(func=cmd_curate)

    s = sub.add_parser("train", help="train a network on a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--history")
    s.add_argument("--rate", type=float)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("classify", help="classify the beats of one recording")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--rate", type=float)
    s.add_argument("--boundaries")
    s.add_argument("--stream", action="store_true")
    s.add_argument("--ta", type=float)
    s.add_argument("--threshold", type=float, default=0.0, help="CL(N) decision threshold in percent")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("evaluate", help="k-fold cross-validation")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config")
    s.add_argument("--folds", type=int, default=4)
    s.add_argument("--runs", type=int, default=10)
    s.add_argument("--ta", type=float, default=0.25)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--rate", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="re-threshold stored outcomes over a T_a grid")
    s.add_argument("--results", required=True)
    s.add_argument("--ta-min", type=float, default=0.1)
    s.add_argument("--ta-max", type=float, default=0.4)
    s.add_argument("--steps", type=int, default=31)
    s.add_argument("--reference", choices=sorted(REFERENCE_POINTS) + ["none"], default="high_snr")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("complexity", help="operation-count report")
    s.add_argument("--config")
    s.add_argument("--no-instrument", action="store_true")
    s.set_defaults(func=cmd_complexity)

    s = sub.add_parser("benchmark", help="per-beat classification latency")
    s.add_argument("--model", required=True)
    s.add_argument("--beats", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
