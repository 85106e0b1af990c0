"""Persistence: audio decoding, manifests, config files and the model binary."""
from __future__ import annotations

import csv
import dataclasses
import json
import os
import struct
import tempfile
import wave
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .network import LABEL_A, LABEL_N, Network, NetworkConfig, ShapeError, layer_shapes
from .signal import RecordingMeta
from .training import TrainConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "AudioFormatError",
    "ModelFormatError",
    "ManifestRow",
    "load_audio",
    "write_wav",
    "read_boundaries",
    "write_boundaries",
    "read_manifest",
    "write_manifest",
    "load_config",
    "save_model",
    "load_model",
    "atomic_write_text",
    "atomic_write_bytes",
    "MODEL_MAGIC",
    "MODEL_VERSION",
]

PathLike = Union[str, os.PathLike]

MODEL_MAGIC = b"PCGCNN1D"
MODEL_VERSION = 1


class AudioFormatError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".%s." % path.name, dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# audio

def load_audio(path: PathLike, rate: Optional[float] = None, label: Optional[str] = None,
               record_id: Optional[str] = None) -> RecordingMeta:
    """Decode a 16-bit PCM mono WAV, or a one-sample-per-line CSV with ``rate`` given.

    PCM samples are scaled by 1/32768 into [-1, 1].
    """
    path = Path(path)
    rid = record_id or path.stem
    if path.suffix.lower() in (".csv", ".txt"):
        if rate is None:
            raise AudioFormatError("%s: CSV input needs an explicit sample rate" % path)
        try:
            samples = np.loadtxt(path, delimiter=",", ndmin=1, dtype=np.float64)
        except ValueError as exc:
            raise AudioFormatError("%s: malformed sample CSV (%s)" % (path, exc)) from None
        if samples.ndim != 1:
            raise AudioFormatError("%s: expected one sample per line" % path)
        return RecordingMeta(rid, float(rate), label, samples)

    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            fs = wf.getframerate()
            n = wf.getnframes()
            if channels != 1:
                raise AudioFormatError("%s: unsupported channel count %d (mono required)"
                                       % (path, channels))
            if width != 2:
                raise AudioFormatError("%s: unsupported bit depth %d" % (path, 8 * width))
            raw = wf.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError("%s: malformed WAV header (%s)" % (path, exc)) from None
    if len(raw) != 2 * n:
        raise AudioFormatError("%s: data chunk holds %d bytes, header declares %d frames"
                               % (path, len(raw), n))
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return RecordingMeta(rid, float(rate if rate is not None else fs), label, samples)


def write_wav(path: PathLike, samples, sample_rate: int = 4000) -> None:
    """Write samples in [-1, 1] as 16-bit PCM mono."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 32767 / 32768)
    pcm = np.round(x * 32768.0).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(pcm.tobytes())


def read_boundaries(path: PathLike) -> list[tuple[int, int]]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0].strip() == "start":
                continue
            out.append((int(row[0]), int(row[1])))
    return out


def write_boundaries(path: PathLike, bounds) -> None:
    atomic_write_text(path, "start,end\n" + "".join("%d,%d\n" % b for b in bounds))


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class ManifestRow:
    record_id: str
    path: Path
    label: str
    boundaries: Optional[Path] = None


def read_manifest(path: PathLike) -> list[ManifestRow]:
    """Rows ``record_id,path,label[,boundaries]``; relative paths resolve against the manifest."""
    path = Path(path)
    base = path.parent
    rows, seen = [], set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and row[0].strip() == "record_id":
                continue
            if len(row) < 3:
                raise ValueError("%s:%d: expected record_id,path,label[,boundaries]" % (path, lineno))
            rid, fpath, label = (c.strip() for c in row[:3])
            if label not in (LABEL_N, LABEL_A):
                raise ValueError("%s:%d: label must be N or A, got %r" % (path, lineno, label))
            if rid in seen:
                raise ValueError("%s:%d: duplicate record_id %r" % (path, lineno, rid))
            seen.add(rid)
            bpath = row[3].strip() if len(row) > 3 and row[3].strip() else None
            rows.append(ManifestRow(rid, _resolve(base, fpath), label,
                                    _resolve(base, bpath) if bpath else None))
    return rows


def _resolve(base: Path, rel: str) -> Path:
    return Path(os.path.normpath(base / rel))


def write_manifest(path: PathLike, rows) -> None:
    path = Path(path)
    lines = ["record_id,path,label,boundaries"]
    for r in rows:
        lines.append(",".join([r.record_id, os.path.relpath(r.path, path.parent), r.label,
                               os.path.relpath(r.boundaries, path.parent) if r.boundaries else ""]))
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# config

def load_config(path: Optional[PathLike] = None, **overrides) -> tuple[NetworkConfig, TrainConfig]:
    """Read a flat ``key = value`` TOML file naming NetworkConfig/TrainConfig fields.

    Missing keys keep their defaults; unknown keys are rejected.
    """
    values = {}
    if path is not None:
        with open(path, "rb") as fh:
            values = tomllib.load(fh)
    values.update({k: v for k, v in overrides.items() if v is not None})
    net_fields = {f.name for f in dataclasses.fields(NetworkConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(values) - net_fields - train_fields
    if unknown:
        raise ValueError("unknown config key(s): %s" % ", ".join(sorted(unknown)))
    for k, v in values.items():
        if isinstance(v, dict):
            raise ValueError("config must be flat; %r is a table" % k)
    net = NetworkConfig(**{k: v for k, v in values.items() if k in net_fields})
    tr = TrainConfig(**{k: v for k, v in values.items() if k in train_fields})
    return net, tr


# ---------------------------------------------------------------------------
# model binary
#
# layout (little-endian):
#   8s   magic "PCGCNN1D"
#   u32  format version
#   u32  header length H
#   H    UTF-8 JSON: {"config": {...}, "provenance": {...}, "n_params": P}
#   u64  parameter count P
#   P    float64 parameters, kernels then bias per layer
#   u32  CRC32 of every preceding byte

def save_model(network: Network, path: PathLike, provenance: Optional[dict] = None) -> None:
    header = json.dumps({
        "config": dataclasses.asdict(network.config),
        "provenance": provenance or {},
        "n_params": network.n_parameters,
    }, sort_keys=True).encode("utf-8")
    params = network.flat_parameters().astype("<f8")
    body = b"".join([
        MODEL_MAGIC,
        struct.pack("<II", MODEL_VERSION, len(header)),
        header,
        struct.pack("<Q", params.size),
        params.tobytes(),
    ])
    atomic_write_bytes(path, body + struct.pack("<I", zlib.crc32(body)))


def load_model(path: PathLike) -> tuple[Network, dict]:
    """Read a model file; return the network and its provenance record."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MODEL_MAGIC:
        raise ModelFormatError("%s: not a model file (bad magic)" % path)
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != MODEL_VERSION:
        raise ModelFormatError("%s: unsupported model format version %d" % (path, version))
    pos = 16
    if pos + hlen + 8 + 4 > len(data):
        raise ModelFormatError("%s: header length %d runs past end of file" % (path, hlen))
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except ValueError as exc:
        raise ModelFormatError("%s: corrupt header (%s)" % (path, exc)) from None
    pos += hlen
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if pos + 8 * count + 4 != len(data):
        raise ModelFormatError("%s: parameter count %d does not match file size" % (path, count))
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise ModelFormatError("%s: checksum mismatch" % path)
    try:
        config = NetworkConfig(**header["config"])
        template = Network(config, *_empty_params(config))
    except (TypeError, ValueError, KeyError) as exc:
        raise ModelFormatError("%s: invalid network config (%s)" % (path, exc)) from None
    params = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
    if count != template.n_parameters or header.get("n_params") != count:
        raise ModelFormatError("%s: %d stored parameters, config needs %d"
                               % (path, count, template.n_parameters))
    try:
        network = template.with_flat_parameters(params)
    except ShapeError as exc:
        raise ModelFormatError(str(exc)) from None
    if not np.all(np.isfinite(params)):
        raise ModelFormatError("%s: non-finite parameters" % path)
    return network, header.get("provenance", {})


def _empty_params(config: NetworkConfig):
    shapes = layer_shapes(config)
    return ([np.zeros((s.n_in, s.n_out, s.kernel_size)) for s in shapes],
            [np.zeros(s.n_out) for s in shapes])
