"""Scoring of drift detections and known/unknown labeling.

Drift measures work in chunk indices:

* ``d1`` - mean distance from each detection to the nearest true event,
* ``d2`` - mean distance from each true event to the nearest detection,
* ``r_measure`` - normalized discrepancy between detection and event counts.

Runs without a single detection score ``n_chunks`` on D1 and D2.

Classification metrics treat known samples as positives and unknown ones as
negatives.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

R_VARIANTS = ("abs_diff", "inverse_ratio")


@dataclass(frozen=True)
class DetectionLog:
    detections: tuple[int, ...]
    n_chunks: int

    def __post_init__(self):
        # a chunk is either flagged or not, so repeats collapse
        dets = tuple(sorted({int(d) for d in self.detections}))
        if self.n_chunks < 1:
            raise ValueError("n_chunks must be positive")
        if any(d < 0 or d >= self.n_chunks for d in dets):
            raise ValueError(f"detections must lie in [0, {self.n_chunks})")
        object.__setattr__(self, "detections", dets)

    @classmethod
    def from_flags(cls, flags: Sequence[bool]) -> "DetectionLog":
        return cls(tuple(i for i, f in enumerate(flags) if f), len(flags))


def _check_events(events) -> np.ndarray:
    events = np.asarray(sorted(events), dtype=float)
    if events.size == 0:
        raise ValueError("drift measures need at least one event")
    return events


def _mean_nearest(points: np.ndarray, targets: np.ndarray) -> float:
    return float(np.abs(points[:, None] - targets[None, :]).min(axis=1).mean())


def d1(log: DetectionLog, events: Sequence[int]) -> float:
    ev = _check_events(events)
    if not log.detections:
        return float(log.n_chunks)
    return _mean_nearest(np.asarray(log.detections, dtype=float), ev)


def d2(log: DetectionLog, events: Sequence[int]) -> float:
    ev = _check_events(events)
    if not log.detections:
        return float(log.n_chunks)
    return _mean_nearest(ev, np.asarray(log.detections, dtype=float))


def r_measure(log: DetectionLog, events: Sequence[int], variant: str = "abs_diff") -> float:
    """Detection-count discrepancy; 0 is ideal.

    ``abs_diff``: |detections - events| / events.
    ``inverse_ratio``: |events / detections - 1|; a run without detections
    scores 1.
    """
    n_events = _check_events(events).size
    n_det = len(log.detections)
    if variant == "abs_diff":
        return abs(n_det - n_events) / n_events
    if variant == "inverse_ratio":
        return abs(n_events / n_det - 1.0) if n_det else 1.0
    raise ValueError(f"unknown R variant {variant!r}, expected one of {R_VARIANTS}")


def drift_measures(log: DetectionLog, events: Sequence[int], r_variant: str = "abs_diff") -> dict:
    return {"d1": d1(log, events), "d2": d2(log, events), "r": r_measure(log, events, r_variant)}


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


@dataclass
class ClassificationReport:
    tp: int
    fn: int
    tn: int
    fp: int
    per_chunk: list[dict] = field(default_factory=list)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> float:
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def balanced_accuracy(self) -> float:
        return (self.recall + self.specificity) / 2.0

    def summary(self) -> dict:
        return {
            "recall": _none_if_nan(self.recall),
            "specificity": _none_if_nan(self.specificity),
            "balanced_accuracy": _none_if_nan(self.balanced_accuracy),
            "tp": self.tp, "fn": self.fn, "tn": self.tn, "fp": self.fp,
        }


def _none_if_nan(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def classification_metrics(predicted, truth) -> ClassificationReport:
    """Pooled confusion counts over all chunks, plus a per-chunk series.

    ``predicted`` and ``truth`` are per-chunk sequences of 1 (known) / 0
    (unknown). Per-chunk recall or specificity is ``None`` when the chunk
    has no positives or negatives respectively.
    """
    if len(predicted) != len(truth):
        raise ValueError(f"chunk count mismatch: {len(predicted)} predicted vs {len(truth)} truth")
    tp = fn = tn = fp = 0
    series = []
    for i, (p, t) in enumerate(zip(predicted, truth)):
        p = np.asarray(p).astype(bool)
        t = np.asarray(t).astype(bool)
        if p.shape != t.shape:
            raise ValueError(f"chunk {i}: label shape {p.shape} vs truth {t.shape}")
        c_tp = int((p & t).sum())
        c_fn = int((~p & t).sum())
        c_tn = int((~p & ~t).sum())
        c_fp = int((p & ~t).sum())
        tp, fn, tn, fp = tp + c_tp, fn + c_fn, tn + c_tn, fp + c_fp
        rec = _ratio(c_tp, c_tp + c_fn)
        spec = _ratio(c_tn, c_tn + c_fp)
        series.append({
            "chunk": i,
            "recall": _none_if_nan(rec),
            "specificity": _none_if_nan(spec),
            "bac": _none_if_nan((rec + spec) / 2.0),
            "unknown_fraction": float((~p).mean()) if p.size else 0.0,
        })
    return ClassificationReport(tp, fn, tn, fp, series)


SERIES_COLUMNS = ("chunk", "drift_flag", "recall", "specificity", "bac", "unknown_fraction")


def write_series_csv(path, report: ClassificationReport, drift_flags: Sequence[bool]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_COLUMNS)
        for row, flag in zip(report.per_chunk, drift_flags):
            writer.writerow([
                row["chunk"], int(bool(flag)),
                *("" if row[k] is None else repr(row[k]) for k in ("recall", "specificity", "bac")),
                repr(row["unknown_fraction"]),
            ])


def evaluate_run(drift_flags: Sequence[bool], predicted_labels, truth_known, events: Sequence[int],
                 r_variant: str = "abs_diff") -> dict:
    """Full metric report for one stream and one method.

    Drift measures are skipped (``None``) when ``events`` is empty.
    """
    log = DetectionLog.from_flags(drift_flags)
    cls = classification_metrics(predicted_labels, truth_known)
    out = {"n_chunks": log.n_chunks, "detections": list(log.detections), "events": sorted(int(e) for e in events)}
    if len(events):
        out.update(drift_measures(log, events, r_variant))
    else:
        out.update({"d1": None, "d2": None, "r": None})
    out.update(cls.summary())
    return out
