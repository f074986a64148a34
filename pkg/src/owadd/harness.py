"""Experiment plumbing: corpus generation, method runs, scoring and reports.

Output directory layout::

    manifest.json
    streams/<stream>.ows (+ .truth.json)
    verdicts/<stream>__<method>.csv
    labels/<stream>__<method>.csv
    runs/<stream>__<method>.json
    series/<stream>__<method>.csv
    report.json, summary.csv, ranks.csv
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import evaluation
from .baselines import CentroidNovelty, KsddDetector
from .detector import DetectorConfig, OwaddDetector, run_detector
from .nn import TrainingDivergedError
from .stats import kde_score
from .streamgen import StreamConfig, StreamFileError, generate_stream, read_stream, read_stream_header, write_stream

log = logging.getLogger(__name__)

METHODS = ("owadd", "ksdd", "centroid")
VERDICT_COLUMNS = ("chunk", "drift_flag", "positive_test_count", "unknown_count")
LABEL_COLUMNS = ("chunk", "row", "label")
MANIFEST_FORMAT = "owadd-manifest/1"
REPORT_FORMAT = "owadd-report/1"
METRICS = ("d1", "d2", "r", "balanced_accuracy", "recall", "specificity")
# lower is better for drift errors, higher for classification scores
LOWER_IS_BETTER = {"d1": True, "d2": True, "r": True, "balanced_accuracy": False, "recall": False, "specificity": False}


class DataError(Exception):
    """Bad or inconsistent input data (exit code 2)."""


class MethodError(Exception):
    """A detector failed while processing a stream (exit code 3)."""


@dataclass
class StreamGroup:
    name: str
    config: dict
    replications: int = 1
    base_seed: int = 0
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError(f"group {self.name!r}: replications must be >= 1")
        for key, values in self.grid.items():
            if not isinstance(values, list) or not values:
                raise ValueError(f"group {self.name!r}: grid entry {key!r} must be a non-empty list")

    def configs(self) -> list[tuple[str, StreamConfig]]:
        """(config id, config) pairs without the replication seed applied."""
        keys = sorted(self.grid)
        out = []
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            params = {**self.config, **dict(zip(keys, combo))}
            suffix = "".join(f"_{_short(k)}{v}" for k, v in zip(keys, combo))
            cfg = StreamConfig.from_dict({**params, "seed": 0})
            out.append((f"{self.name}{suffix}", cfg))
        return out

    def streams(self) -> list[tuple[str, str, StreamConfig]]:
        """(stream id, config id, seeded config) for every replication."""
        out = []
        for config_id, cfg in self.configs():
            for rep in range(self.replications):
                seeded = StreamConfig.from_dict({**cfg.to_dict(), "seed": self.base_seed + rep})
                out.append((f"{config_id}_rep{rep:02d}", config_id, seeded))
        return out


def _short(key: str) -> str:
    return {
        "n_drifts": "D", "n_novelties": "N", "novel_proportion": "P",
        "class_separation": "S", "n_chunks": "C", "chunk_size": "Z", "n_features": "F",
    }.get(key, key)


@dataclass
class ExperimentSpec:
    groups: list[StreamGroup]
    methods: list[dict]
    output_dir: str | None = None
    auto_confirm: tuple[float, int] | None = None
    r_variant: str = "abs_diff"

    def __post_init__(self):
        if not self.methods:
            raise ValueError("method list must be non-empty")
        for m in self.methods:
            if m.get("id") not in METHODS:
                raise ValueError(f"unknown method id {m.get('id')!r}; known: {', '.join(METHODS)}")
        if self.r_variant not in evaluation.R_VARIANTS:
            raise ValueError(f"unknown R variant {self.r_variant!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        groups = [
            StreamGroup(
                name=g["name"],
                config=dict(g.get("config", {})),
                replications=int(g.get("replications", 1)),
                base_seed=int(g.get("base_seed", 0)),
                grid=dict(g.get("grid", {})),
            )
            for g in data.get("streams", [])
        ]
        if not groups:
            raise ValueError("spec lists no stream groups")
        methods = [m if isinstance(m, dict) else {"id": m} for m in data.get("methods", ["owadd"])]
        auto = data.get("auto_confirm")
        if auto is not None:
            auto = (float(auto["fraction"]), int(auto["consecutive"]))
        return cls(groups, methods, data.get("output_dir"), auto, data.get("r_variant", "abs_diff"))

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ValueError(f"spec {path} is not valid JSON: {exc}") from exc

    def with_seed(self, seed: int) -> "ExperimentSpec":
        for g in self.groups:
            g.base_seed = seed
        return self

    def to_dict(self) -> dict:
        return {
            "streams": [
                {"name": g.name, "config": g.config, "replications": g.replications,
                 "base_seed": g.base_seed, "grid": g.grid}
                for g in self.groups
            ],
            "methods": self.methods,
            "auto_confirm": None if self.auto_confirm is None
            else {"fraction": self.auto_confirm[0], "consecutive": self.auto_confirm[1]},
            "r_variant": self.r_variant,
        }

    def all_streams(self) -> list[tuple[str, str, StreamConfig]]:
        out = [s for g in self.groups for s in g.streams()]
        ids = [s[0] for s in out]
        if len(set(ids)) != len(ids):
            raise ValueError("stream ids collide; give groups distinct names")
        return out


def _dump_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# -- generate ------------------------------------------------------------


def cmd_generate(spec: ExperimentSpec, out_dir) -> dict:
    out = Path(out_dir)
    streams = spec.all_streams()
    (out / "streams").mkdir(parents=True, exist_ok=True)
    entries = []
    for stream_id, config_id, cfg in streams:
        rel = f"streams/{stream_id}.ows"
        chunks, truth = generate_stream(cfg)
        write_stream(chunks, truth, out / rel, cfg)
        entries.append({"stream": stream_id, "config_id": config_id, "path": rel, "config": cfg.to_dict()})
        log.info("generated %s", rel)
    manifest = {"format": MANIFEST_FORMAT, "spec": spec.to_dict(), "streams": entries}
    _dump_json(out / "manifest.json", manifest)
    return manifest


def load_manifest(out_dir) -> dict:
    path = Path(out_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest at {path}; run 'generate' first")
    data = json.loads(path.read_text())
    if data.get("format") != MANIFEST_FORMAT:
        raise DataError(f"unsupported manifest format {data.get('format')!r}")
    return data


# -- detect --------------------------------------------------------------


@dataclass
class MethodRun:
    drift_flags: list[bool]
    positive_counts: list[int]
    labels: list[np.ndarray]


def run_method(method: str, chunks, overrides: dict | None = None, auto_confirm=None) -> MethodRun:
    overrides = dict(overrides or {})
    rows = [getattr(c, "rows", c) for c in chunks]
    if method == "owadd":
        verdicts = run_detector(rows, DetectorConfig.from_dict(overrides), auto_confirm)
        return MethodRun([v.drift for v in verdicts], [v.positive_test_count for v in verdicts],
                         [v.labels for v in verdicts])
    if method == "ksdd":
        det = KsddDetector(**overrides)
        det.initialize(rows[0])
        flags = [False] + [det.process_chunk(r) for r in rows[1:]]
        return MethodRun(flags, [0] * len(rows), [np.ones(len(r), dtype=np.int8) for r in rows])
    if method == "centroid":
        model = CentroidNovelty.fit(rows[0], **overrides)
        return MethodRun([False] * len(rows), [0] * len(rows), [model.labels(r) for r in rows])
    raise ValueError(f"unknown method {method!r}")


def _run_key(stream_id: str, method: str) -> str:
    return f"{stream_id}__{method}"


def write_verdicts(path: Path, run: MethodRun) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(VERDICT_COLUMNS)
        for i, (flag, pos, lab) in enumerate(zip(run.drift_flags, run.positive_counts, run.labels)):
            writer.writerow([i, int(flag), pos, int((np.asarray(lab) == 0).sum())])


def write_labels(path: Path, run: MethodRun) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_COLUMNS)
        for i, lab in enumerate(run.labels):
            for j, v in enumerate(lab):
                writer.writerow([i, j, int(v)])


def read_verdicts(path) -> tuple[list[bool], list[int]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != VERDICT_COLUMNS:
            raise DataError(f"{path}: unexpected verdict columns {reader.fieldnames}")
        rows = list(reader)
    return [r["drift_flag"] == "1" for r in rows], [int(r["positive_test_count"]) for r in rows]


def read_labels(path, n_chunks: int) -> list[np.ndarray]:
    per_chunk: list[list[int]] = [[] for _ in range(n_chunks)]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LABEL_COLUMNS:
            raise DataError(f"{path}: unexpected label columns {reader.fieldnames}")
        for r in reader:
            chunk = int(r["chunk"])
            if chunk >= n_chunks:
                raise DataError(f"{path}: chunk {chunk} beyond {n_chunks} verdict rows")
            per_chunk[chunk].append(int(r["label"]))
    return [np.asarray(c, dtype=np.int8) for c in per_chunk]


def _detect_one(job: tuple) -> tuple[str, dict]:
    stream_path, stream_id, method, overrides, auto_confirm, out_dir = job
    out = Path(out_dir)
    try:
        chunks, _ = read_stream(stream_path, with_truth=False)
    except StreamFileError as exc:
        raise DataError(f"{stream_path}: {exc}") from exc
    start = time.perf_counter()
    try:
        run = run_method(method, chunks, overrides, auto_confirm)
    except (TrainingDivergedError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise MethodError(f"{method} failed on {stream_id}: {exc}") from exc
    elapsed = time.perf_counter() - start
    key = _run_key(stream_id, method)
    write_verdicts(out / "verdicts" / f"{key}.csv", run)
    write_labels(out / "labels" / f"{key}.csv", run)
    meta = {
        "stream": stream_id, "method": method, "overrides": overrides,
        "auto_confirm": auto_confirm, "n_chunks": len(chunks),
        "wall_clock_seconds": elapsed,
    }
    _dump_json(out / "runs" / f"{key}.json", meta)
    return key, meta


def cmd_detect(stream_paths: list[tuple[str, Path]], methods: list[dict], out_dir,
               auto_confirm=None, jobs: int = 1) -> list[dict]:
    """Run each method over each stream; ``stream_paths`` holds (stream id, path)."""
    out = Path(out_dir)
    for m in methods:
        if m.get("id") not in METHODS:
            raise ValueError(f"unknown method id {m.get('id')!r}; known: {', '.join(METHODS)}")
        # config errors surface before any output is written
        if m["id"] == "owadd":
            DetectorConfig.from_dict(m.get("overrides", {}))
    for _, path in stream_paths:
        if not Path(path).exists():
            raise DataError(f"stream file {path} does not exist")
        try:
            read_stream_header(path)
        except (StreamFileError, OSError) as exc:
            raise DataError(f"{path}: {exc}") from exc
    for sub in ("verdicts", "labels", "runs"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    jobs_list = [
        (str(path), stream_id, m["id"], dict(m.get("overrides", {})), auto_confirm, str(out))
        for stream_id, path in stream_paths
        for m in methods
    ]
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_detect_one, jobs_list))
    else:
        results = [_detect_one(j) for j in jobs_list]
    return [meta for _, meta in results]


# -- evaluate ------------------------------------------------------------


def evaluate_stream(stream_path, verdict_path, label_path, r_variant: str = "abs_diff") -> tuple[dict, evaluation.ClassificationReport, list[bool]]:
    try:
        header = read_stream_header(stream_path)
        _, truth = read_stream(stream_path, with_truth=True)
    except StreamFileError as exc:
        raise DataError(f"{stream_path}: {exc}") from exc
    flags, _ = read_verdicts(verdict_path)
    n_chunks = int(header["n_chunks"])
    if len(flags) != n_chunks:
        raise DataError(f"{verdict_path}: {len(flags)} verdict rows but stream has {n_chunks} chunks")
    labels = read_labels(label_path, n_chunks)
    truth_known = [~u for u in truth.unknown]
    try:
        metrics = evaluation.evaluate_run(flags, labels, truth_known, truth.event_chunks, r_variant)
        cls = evaluation.classification_metrics(labels, truth_known)
    except ValueError as exc:
        raise DataError(f"{label_path}: {exc}") from exc
    return metrics, cls, flags


def _mean_std(values: list) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=float)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate(runs: list[dict]) -> list[dict]:
    groups: dict[tuple[str, str], list[dict]] = {}
    for run in runs:
        groups.setdefault((run["config_id"], run["method"]), []).append(run)
    rows = []
    for (config_id, method), members in sorted(groups.items()):
        row = {"config_id": config_id, "method": method, "replications": len(members)}
        for metric in METRICS:
            mean, std = _mean_std([m["metrics"][metric] for m in members])
            row[f"{metric}_mean"] = mean
            row[f"{metric}_std"] = std
        rows.append(row)
    return rows


def cmd_evaluate(out_dir, methods: list[str] | None = None, r_variant: str | None = None) -> dict:
    out = Path(out_dir)
    manifest = load_manifest(out)
    spec = manifest["spec"]
    r_variant = r_variant or spec.get("r_variant", "abs_diff")
    methods = methods or [m["id"] for m in spec["methods"]]
    (out / "series").mkdir(exist_ok=True)
    runs = []
    for entry in manifest["streams"]:
        for method in methods:
            key = _run_key(entry["stream"], method)
            verdict_path = out / "verdicts" / f"{key}.csv"
            label_path = out / "labels" / f"{key}.csv"
            if not verdict_path.exists() or not label_path.exists():
                raise DataError(f"missing verdicts for {key}; run 'detect' first")
            metrics, cls, flags = evaluate_stream(out / entry["path"], verdict_path, label_path, r_variant)
            evaluation.write_series_csv(out / "series" / f"{key}.csv", cls, flags)
            runs.append({"stream": entry["stream"], "config_id": entry["config_id"], "method": method,
                         "metrics": metrics})
    summary = aggregate(runs)
    report = {"format": REPORT_FORMAT, "r_variant": r_variant, "runs": runs, "summary": summary}
    _dump_json(out / "report.json", report)
    _write_summary_csv(out / "summary.csv", summary)
    return report


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def _write_summary_csv(path: Path, rows: list[dict]) -> None:
    cols = ["config_id", "method", "replications"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in cols])


# -- report --------------------------------------------------------------


def rank_table(summary: list[dict]) -> list[dict]:
    """Average rank per method and metric across configs (1 = best, ties averaged)."""
    by_config: dict[str, dict[str, dict]] = {}
    for row in summary:
        by_config.setdefault(row["config_id"], {})[row["method"]] = row
    ranks: dict[tuple[str, str], list[float]] = {}
    for rows in by_config.values():
        for metric in METRICS:
            scored = [(m, r[f"{metric}_mean"]) for m, r in rows.items() if r[f"{metric}_mean"] is not None]
            if not scored:
                continue
            sign = 1.0 if LOWER_IS_BETTER[metric] else -1.0
            values = np.array([sign * v for _, v in scored])
            for i, (method, _) in enumerate(scored):
                less = float((values < values[i]).sum())
                ties = float((values == values[i]).sum())
                ranks.setdefault((method, metric), []).append(less + (ties + 1) / 2.0)
    methods = sorted({m for m, _ in ranks})
    out = []
    for method in methods:
        row = {"method": method}
        for metric in METRICS:
            vals = ranks.get((method, metric))
            row[f"{metric}_rank"] = float(np.mean(vals)) if vals else None
        out.append(row)
    return out


def kde_diagnostics(stream_path, chunk_indices: list[int], overrides: dict | None = None,
                    grid_points: int = 200) -> dict[int, dict]:
    """Per-sample errors, densities and labels for selected chunks of an OWADD run.

    Also returns the KDE curve on a grid spanning the observed errors, which is
    what an error-histogram/density/label figure needs.
    """
    chunks, truth = read_stream(stream_path, with_truth=True)
    wanted = set(chunk_indices)
    det, _ = OwaddDetector.initialize(chunks[0].rows, DetectorConfig.from_dict(overrides or {}))
    out = {}
    for chunk in chunks:
        if chunk.index > 0:
            det.process_chunk(chunk.rows)
        if chunk.index in wanted:
            errors = det.known_class_errors(chunk.rows)
            density = kde_score(det.kde, errors)
            lo, hi = float(errors.min()), float(errors.max())
            pad = 3 * det.kde.bandwidth
            grid = np.linspace(min(lo, det.kde.support_points.min()) - pad,
                               max(hi, det.kde.support_points.max()) + pad, grid_points)
            out[chunk.index] = {
                "errors": errors, "density": density,
                "labels": (density >= det.config.novelty_threshold).astype(int),
                "class_ids": truth.class_ids[chunk.index], "unknown": truth.unknown[chunk.index],
                "grid": grid, "grid_density": kde_score(det.kde, grid),
            }
        if chunk.index >= max(wanted, default=-1):
            break
    return out


def cmd_report(out_dir, diagnose: list[int] | None = None, stream: str | None = None) -> list[dict]:
    out = Path(out_dir)
    report_path = out / "report.json"
    if not report_path.exists():
        raise DataError(f"no report at {report_path}; run 'evaluate' first")
    report = json.loads(report_path.read_text())
    ranks = rank_table(report["summary"])
    cols = ["method"] + [f"{m}_rank" for m in METRICS]
    with open(out / "ranks.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in ranks:
            writer.writerow([_fmt(row[c]) for c in cols])

    if diagnose:
        manifest = load_manifest(out)
        entries = {e["stream"]: e for e in manifest["streams"]}
        entry = entries.get(stream) if stream else manifest["streams"][0]
        if entry is None:
            raise DataError(f"stream {stream!r} not in manifest")
        overrides = next((m.get("overrides", {}) for m in manifest["spec"]["methods"] if m["id"] == "owadd"), {})
        diag = kde_diagnostics(out / entry["path"], diagnose, overrides)
        ddir = out / "diagnostics"
        ddir.mkdir(exist_ok=True)
        for idx, d in diag.items():
            with open(ddir / f"{entry['stream']}_chunk{idx:03d}_samples.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["row", "error", "density", "label", "class_id", "is_unknown"])
                for j in range(len(d["errors"])):
                    writer.writerow([j, repr(float(d["errors"][j])), repr(float(d["density"][j])),
                                     d["labels"][j], int(d["class_ids"][j]), int(d["unknown"][j])])
            with open(ddir / f"{entry['stream']}_chunk{idx:03d}_kde.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["error", "density"])
                for x, y in zip(d["grid"], d["grid_density"]):
                    writer.writerow([repr(float(x)), repr(float(y))])
    return ranks


def run_pipeline(spec: ExperimentSpec, out_dir, jobs: int = 1) -> dict:
    """generate -> detect -> evaluate in one call."""
    manifest = cmd_generate(spec, out_dir)
    streams = [(e["stream"], Path(out_dir) / e["path"]) for e in manifest["streams"]]
    cmd_detect(streams, spec.methods, out_dir, spec.auto_confirm, jobs)
    return cmd_evaluate(out_dir)

