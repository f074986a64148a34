"""Synthetic tabular streams with scheduled sudden drifts and novel classes.

Every class is an isotropic unit-variance Gaussian whose center is
``class_separation * N(0, I)``. A drift event resamples the centers of all
known classes. A novelty event activates a new class that stays active, and
stays labeled unknown, until the end of the stream.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

DRIFT = "drift"
NOVELTY = "novelty"

STREAM_MAGIC = b"OWSTRM\x00\x00"
STREAM_VERSION = 1
TRUTH_FORMAT = "owadd-truth/1"


class StreamFileError(Exception):
    """Base class for stream file problems."""


class MalformedStreamError(StreamFileError):
    pass


class StreamVersionError(StreamFileError):
    pass


class TruncatedStreamError(StreamFileError):
    pass


@dataclass(frozen=True)
class StreamConfig:
    n_chunks: int = 200
    chunk_size: int = 200
    n_features: int = 50
    n_known_classes: int = 2
    n_drifts: int = 0
    n_novelties: int = 0
    novel_proportion: float = 0.2
    class_separation: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_chunks", "chunk_size", "n_features", "n_known_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_drifts < 0 or self.n_novelties < 0:
            raise ValueError("event counts must be non-negative")
        if self.n_drifts + self.n_novelties >= self.n_chunks:
            raise ValueError("n_drifts + n_novelties must be smaller than n_chunks")
        if not 0.0 <= self.novel_proportion < 1.0:
            raise ValueError("novel_proportion must be in [0, 1)")
        if not self.class_separation > 0:
            raise ValueError("class_separation must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "StreamConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown stream config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DataChunk:
    rows: np.ndarray
    index: int

    def __len__(self):
        return self.rows.shape[0]


@dataclass
class GroundTruth:
    """Event list plus per-sample class ids and unknown flags for every chunk."""

    events: list[tuple[int, str]]
    class_ids: list[np.ndarray]
    unknown: list[np.ndarray]
    novelty_classes: dict[int, int] = field(default_factory=dict)  # chunk -> class id

    @property
    def event_chunks(self) -> list[int]:
        return [idx for idx, _ in self.events]

    def known_mask(self, chunk: int) -> np.ndarray:
        return ~self.unknown[chunk]

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return (
            self.events == other.events
            and self.novelty_classes == other.novelty_classes
            and len(self.class_ids) == len(other.class_ids)
            and all(np.array_equal(a, b) for a, b in zip(self.class_ids, other.class_ids))
            and all(np.array_equal(a, b) for a, b in zip(self.unknown, other.unknown))
        )


def event_schedule(config: StreamConfig) -> list[tuple[int, str]]:
    """Evenly spaced events, alternating novelty/drift until one type runs out.

    Event ``i`` sits at ``floor((i + 1) * n_chunks / (m + 1))``.
    """
    n_drift, n_nov = config.n_drifts, config.n_novelties
    m = n_drift + n_nov
    types = []
    turn = NOVELTY
    while n_drift or n_nov:
        if turn == NOVELTY and n_nov:
            types.append(NOVELTY)
            n_nov -= 1
        elif turn == DRIFT and n_drift:
            types.append(DRIFT)
            n_drift -= 1
        elif n_nov:
            types.append(NOVELTY)
            n_nov -= 1
        else:
            types.append(DRIFT)
            n_drift -= 1
        turn = DRIFT if turn == NOVELTY else NOVELTY

    events = []
    last = 0
    for i, kind in enumerate(types):
        idx = ((i + 1) * config.n_chunks) // (m + 1)
        idx = max(idx, last + 1)
        if idx > config.n_chunks - 1:
            raise ValueError("cannot fit all events into the stream")
        events.append((idx, kind))
        last = idx
    return events


def _split_counts(total: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder split of ``total`` items proportional to ``weights``."""
    weights = np.asarray(weights, dtype=float)
    exact = total * weights / weights.sum()
    counts = np.floor(exact).astype(int)
    short = total - counts.sum()
    if short:
        # ties go to the earlier entry
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def recency_weights(n_active: int) -> np.ndarray:
    """Newest novelty takes half the novel mass, older ones share the rest.

    Ordered oldest first. A single active novelty takes everything.
    """
    if n_active == 1:
        return np.ones(1)
    older = np.full(n_active - 1, 0.5 / (n_active - 1))
    return np.append(older, 0.5)


def generate_stream(config: StreamConfig) -> tuple[list[DataChunk], GroundTruth]:
    rng = np.random.default_rng(config.seed)
    d = config.n_features
    schedule = dict(event_schedule(config))

    def new_center():
        return config.class_separation * rng.standard_normal(d)

    known_centers = [new_center() for _ in range(config.n_known_classes)]
    novel_centers: list[np.ndarray] = []
    novelty_classes = {}

    chunks, class_ids, unknown = [], [], []
    for n in range(config.n_chunks):
        kind = schedule.get(n)
        if kind == DRIFT:
            known_centers = [new_center() for _ in range(config.n_known_classes)]
        elif kind == NOVELTY:
            novel_centers.append(new_center())
            novelty_classes[n] = config.n_known_classes + len(novel_centers) - 1

        n_novel = int(round(config.novel_proportion * config.chunk_size)) if novel_centers else 0
        n_known = config.chunk_size - n_novel
        ids = []
        known_counts = _split_counts(n_known, np.ones(config.n_known_classes))
        for cls, count in enumerate(known_counts):
            ids.extend([cls] * count)
        if n_novel:
            novel_counts = _split_counts(n_novel, recency_weights(len(novel_centers)))
            for j, count in enumerate(novel_counts):
                ids.extend([config.n_known_classes + j] * count)
        ids = rng.permutation(np.asarray(ids, dtype=np.int64))

        centers = np.stack(known_centers + novel_centers)
        rows = centers[ids] + rng.standard_normal((config.chunk_size, d))
        chunks.append(DataChunk(rows, n))
        class_ids.append(ids)
        unknown.append(ids >= config.n_known_classes)

    truth = GroundTruth(sorted(schedule.items()), class_ids, unknown, novelty_classes)
    return chunks, truth


# ---------------------------------------------------------------------------
# File format
#
# <path>            binary: magic(8) | u16 version | u32 header_len | header JSON
#                   then per chunk: u32 index | u32 rows | rows*features f8 LE,
#                   column-major within the chunk
# <path>.truth.json ground truth sidecar
# ---------------------------------------------------------------------------


def truth_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".truth.json")


def _runs(values: Iterable[int]) -> list[list[int]]:
    runs: list[list[int]] = []
    for v in values:
        v = int(v)
        if runs and runs[-1][0] == v:
            runs[-1][1] += 1
        else:
            runs.append([v, 1])
    return runs


def _unruns(runs) -> np.ndarray:
    return np.concatenate([np.full(n, v, dtype=np.int64) for v, n in runs]) if runs else np.zeros(0, np.int64)


def truth_to_dict(truth: GroundTruth, n_known_classes: int) -> dict:
    return {
        "format": TRUTH_FORMAT,
        "n_known_classes": n_known_classes,
        "events": [{"chunk": idx, "type": kind} for idx, kind in truth.events],
        "novelty_classes": {str(k): v for k, v in sorted(truth.novelty_classes.items())},
        "chunks": [
            {"class_runs": _runs(ids), "unknown_runs": _runs(unk.astype(int))}
            for ids, unk in zip(truth.class_ids, truth.unknown)
        ],
    }


def truth_from_dict(data: dict) -> GroundTruth:
    if data.get("format") != TRUTH_FORMAT:
        raise StreamVersionError(f"unsupported ground truth format {data.get('format')!r}")
    try:
        events = [(int(e["chunk"]), str(e["type"])) for e in data["events"]]
        class_ids = [_unruns(c["class_runs"]) for c in data["chunks"]]
        unknown = [_unruns(c["unknown_runs"]).astype(bool) for c in data["chunks"]]
        novelty = {int(k): int(v) for k, v in data.get("novelty_classes", {}).items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedStreamError(f"malformed ground truth: {exc}") from exc
    return GroundTruth(events, class_ids, unknown, novelty)


def write_stream(chunks: list[DataChunk], truth: GroundTruth, path, config: StreamConfig | None = None) -> None:
    path = Path(path)
    n_features = chunks[0].rows.shape[1] if chunks else 0
    header = {
        "config": config.to_dict() if config else None,
        "n_chunks": len(chunks),
        "n_features": n_features,
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(STREAM_MAGIC)
        fh.write(struct.pack("<HI", STREAM_VERSION, len(head)))
        fh.write(head)
        for chunk in chunks:
            rows = np.asarray(chunk.rows, dtype="<f8")
            if rows.ndim != 2 or rows.shape[1] != n_features:
                raise ValueError(f"chunk {chunk.index} has shape {rows.shape}")
            fh.write(struct.pack("<II", chunk.index, rows.shape[0]))
            fh.write(rows.tobytes(order="F"))
    n_known = config.n_known_classes if config else None
    truth_path(path).write_text(json.dumps(truth_to_dict(truth, n_known), sort_keys=True))


def read_stream_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedStreamError(f"truncated while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_header(fh) -> dict:
    magic = fh.read(len(STREAM_MAGIC))
    if magic != STREAM_MAGIC:
        if len(magic) < len(STREAM_MAGIC) and STREAM_MAGIC.startswith(magic) and magic:
            raise TruncatedStreamError("truncated in magic bytes")
        raise MalformedStreamError("not a stream file (bad magic)")
    version, head_len = struct.unpack("<HI", _read_exact(fh, 6, "header"))
    if version != STREAM_VERSION:
        raise StreamVersionError(f"stream format version {version}, expected {STREAM_VERSION}")
    try:
        return json.loads(_read_exact(fh, head_len, "header JSON"))
    except json.JSONDecodeError as exc:
        raise MalformedStreamError(f"bad header JSON: {exc}") from exc


def read_stream(path, with_truth: bool = True):
    """Load chunks (and the ground-truth sidecar when ``with_truth``)."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh)
        d = int(header["n_features"])
        chunks = []
        for _ in range(int(header["n_chunks"])):
            index, n_rows = struct.unpack("<II", _read_exact(fh, 8, "chunk header"))
            raw = _read_exact(fh, 8 * n_rows * d, f"chunk {index}")
            rows = np.frombuffer(raw, dtype="<f8").reshape((n_rows, d), order="F").astype(float)
            chunks.append(DataChunk(rows, index))
        if fh.read(1):
            raise MalformedStreamError("trailing bytes after last chunk")
    if not with_truth:
        return chunks, None
    tpath = truth_path(path)
    if not tpath.exists():
        raise MalformedStreamError(f"missing ground truth sidecar {tpath}")
    try:
        truth = truth_from_dict(json.loads(tpath.read_text()))
    except json.JSONDecodeError as exc:
        raise MalformedStreamError(f"bad ground truth JSON: {exc}") from exc
    if len(truth.class_ids) != len(chunks):
        raise MalformedStreamError("ground truth chunk count does not match stream")
    return chunks, truth


def export_csv(chunks: list[DataChunk], truth: GroundTruth, path) -> None:
    """Flat CSV: chunk, class_id, is_unknown, f0..f{d-1}."""
    d = chunks[0].rows.shape[1]
    with open(path, "w") as fh:
        fh.write(",".join(["chunk", "class_id", "is_unknown"] + [f"f{i}" for i in range(d)]) + "\n")
        for chunk, ids, unk in zip(chunks, truth.class_ids, truth.unknown):
            for row, cid, u in zip(chunk.rows, ids, unk):
                fh.write(f"{chunk.index},{cid},{int(u)}," + ",".join(repr(float(v)) for v in row) + "\n")
