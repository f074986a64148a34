"""Open-world autoencoding drift detector.

Two mirrored autoencoders are trained on the first chunk. The drift model is
monitored with replicated one-sided t-tests between a reference buffer of
reconstruction errors and the errors of each incoming chunk; it is retrained
whenever drift is signaled. The known-class model only changes through
:meth:`OwaddDetector.confirm_novelty` and drives known/unknown labeling via a
KDE over its reconstruction errors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn
from .stats import KdeModel, kde_fit, kde_score, one_sided_t_test, subsample

STATE_FORMAT = "owadd-detector/1"


class DetectorStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    replications: int = 15
    sample_size: int = 30
    drift_threshold: float = 0.3
    novelty_threshold: float = 0.02
    buffer_capacity: int = 1000
    epochs: int = 400
    significance: float = 0.05
    hidden_widths: tuple[int, ...] = (10, 10, 10)
    # full-chunk batches and a halved step keep the in-sample first-chunk
    # errors close to held-out ones; both still converge within 400 epochs
    learning_rate: float = 5e-4
    batch_size: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.sample_size < 2:
            raise ValueError("sample_size must be >= 2")
        if self.sample_size > self.buffer_capacity:
            raise ValueError("sample_size cannot exceed buffer_capacity")
        if not 0 < self.drift_threshold < 1:
            raise ValueError("drift_threshold must be in (0, 1)")
        if self.novelty_threshold < 0:
            raise ValueError("novelty_threshold must be non-negative")
        if not 0 < self.significance < 1:
            raise ValueError("significance must be in (0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.hidden_widths:
            raise ValueError("hidden_widths must be non-empty")

    @property
    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate, batch_size=self.batch_size)

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown detector config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden_widths"] = list(self.hidden_widths)
        return out


class ErrorBuffer:
    """Bounded store of reference reconstruction errors."""

    def __init__(self, capacity: int, values: Sequence[float] = ()):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.values = np.asarray(values, dtype=float)[:capacity]

    def __len__(self):
        return self.values.size

    @property
    def full(self) -> bool:
        return self.values.size >= self.capacity

    def extend(self, errors: Sequence[float]) -> None:
        # oldest entries are kept when the new batch overfills
        self.values = np.concatenate([self.values, np.asarray(errors, dtype=float)])[: self.capacity]

    def clear(self) -> None:
        self.values = np.zeros(0)


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        scale = x.std(axis=0)
        scale[~(scale > 0)] = 1.0
        return cls(x.mean(axis=0), scale)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


KNOWN = 1
UNKNOWN = 0


@dataclass
class ChunkVerdict:
    chunk_index: int
    drift: bool
    labels: np.ndarray  # 1 known, 0 unknown, aligned to chunk rows
    positive_test_count: int = 0
    mean_reference_error: float = float("nan")
    mean_current_error: float = float("nan")
    tested: bool = False

    @property
    def unknown_count(self) -> int:
        return int((self.labels == UNKNOWN).sum())


@dataclass
class OwaddDetector:
    config: DetectorConfig
    drift_model: nn.Autoencoder
    known_class_model: nn.Autoencoder
    buffer: ErrorBuffer
    scaler: Standardizer
    kde: Optional[KdeModel] = None
    chunk_counter: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)

    @property
    def n_features(self) -> int:
        return self.drift_model.input_dim

    # -- Algorithm steps -------------------------------------------------

    @classmethod
    def initialize(cls, first_chunk, config: DetectorConfig | None = None) -> tuple["OwaddDetector", ChunkVerdict]:
        """Offline phase on the first chunk; returns the detector and its verdict."""
        config = config or DetectorConfig()
        x = np.asarray(first_chunk, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("first chunk must be a non-empty 2-D array")
        scaler = Standardizer.fit(x)
        xs = scaler.transform(x)
        model = nn.new_autoencoder(x.shape[1], config.hidden_widths, config.seed)
        nn.train(model, xs, config.train_config)
        det = cls(
            config=config,
            drift_model=model,
            known_class_model=nn.clone_model(model),
            buffer=ErrorBuffer(config.buffer_capacity),
            scaler=scaler,
            rng=np.random.default_rng([config.seed, 1]),
        )
        errors = nn.reconstruction_errors(det.drift_model, xs)
        det.buffer.extend(errors)
        labels = det._recognize_scaled(xs)
        verdict = ChunkVerdict(0, False, labels, mean_current_error=float(errors.mean()))
        det.chunk_counter = 1
        return det, verdict

    def _scaled(self, chunk) -> np.ndarray:
        x = np.asarray(chunk, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"expected chunk with {self.n_features} features, got shape {x.shape}")
        return self.scaler.transform(x)

    def process_chunk(self, chunk) -> ChunkVerdict:
        xs = self._scaled(chunk)
        index = self.chunk_counter
        self.chunk_counter += 1
        errors = nn.reconstruction_errors(self.drift_model, xs)

        if not self.buffer.full:
            self.buffer.extend(errors)
            return ChunkVerdict(index, False, self._recognize_scaled(xs), mean_current_error=float(errors.mean()))

        cfg = self.config
        n = min(cfg.sample_size, errors.size)
        positives = 0
        for _ in range(cfg.replications):
            reference = subsample(self.buffer.values, cfg.sample_size, self.rng)
            current = subsample(errors, n, self.rng)
            if one_sided_t_test(reference, current).p_value < cfg.significance:
                positives += 1

        verdict = ChunkVerdict(
            index,
            positives / cfg.replications > cfg.drift_threshold,
            labels=np.zeros(0, dtype=np.int8),
            positive_test_count=positives,
            mean_reference_error=float(self.buffer.values.mean()),
            mean_current_error=float(errors.mean()),
            tested=True,
        )
        if verdict.drift:
            nn.train(self.drift_model, xs, cfg.train_config)
            self.buffer.clear()
        verdict.labels = self._recognize_scaled(xs)
        return verdict

    def known_class_errors(self, chunk) -> np.ndarray:
        return nn.reconstruction_errors(self.known_class_model, self._scaled(chunk))

    def _recognize_scaled(self, xs: np.ndarray) -> np.ndarray:
        errors = nn.reconstruction_errors(self.known_class_model, xs)
        if self.kde is None:
            self.kde = kde_fit(errors)
        scores = kde_score(self.kde, errors)
        return np.where(scores >= self.config.novelty_threshold, KNOWN, UNKNOWN).astype(np.int8)

    def recognize_unknown(self, chunk) -> np.ndarray:
        """Known (1) / unknown (0) label per row."""
        return self._recognize_scaled(self._scaled(chunk))

    def confirm_novelty(self, chunk) -> None:
        """Absorb ``chunk`` into the known-class model and refit the KDE.

        The drift model and the reference buffer are left alone.
        """
        xs = self._scaled(chunk)
        if xs.shape[0] == 0:
            raise ValueError("cannot confirm novelty on an empty chunk")
        nn.train(self.known_class_model, xs, self.config.train_config)
        self.kde = kde_fit(nn.reconstruction_errors(self.known_class_model, xs))

    # -- snapshots -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": STATE_FORMAT,
            "config": self.config.to_dict(),
            "drift_model": nn.model_to_dict(self.drift_model),
            "known_class_model": nn.model_to_dict(self.known_class_model),
            "buffer": {"capacity": self.buffer.capacity, "values": self.buffer.values.tolist()},
            "kde": None if self.kde is None else {
                "support_points": np.asarray(self.kde.support_points).tolist(),
                "bandwidth": self.kde.bandwidth,
            },
            "scaler": {"mean": self.scaler.mean.tolist(), "scale": self.scaler.scale.tolist()},
            "chunk_counter": self.chunk_counter,
            "rng_state": self.rng.bit_generator.state,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OwaddDetector":
        if data.get("format") != STATE_FORMAT:
            raise DetectorStateError(f"unsupported detector state {data.get('format')!r}")
        rng = np.random.default_rng()
        rng.bit_generator.state = data["rng_state"]
        kde = data["kde"]
        return cls(
            config=DetectorConfig.from_dict(data["config"]),
            drift_model=nn.model_from_dict(data["drift_model"]),
            known_class_model=nn.model_from_dict(data["known_class_model"]),
            buffer=ErrorBuffer(data["buffer"]["capacity"], data["buffer"]["values"]),
            scaler=Standardizer(np.asarray(data["scaler"]["mean"]), np.asarray(data["scaler"]["scale"])),
            kde=None if kde is None else KdeModel(np.asarray(kde["support_points"]), kde["bandwidth"]),
            chunk_counter=data["chunk_counter"],
            rng=rng,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "OwaddDetector":
        return cls.from_dict(json.loads(Path(path).read_text()))


def run_detector(chunks, config: DetectorConfig | None = None, auto_confirm=None) -> list[ChunkVerdict]:
    """Run the detector over a whole stream of row matrices.

    ``auto_confirm`` is an optional ``(fraction, consecutive)`` pair: when the
    unknown share of a chunk exceeds ``fraction`` for ``consecutive`` chunks
    in a row, the latest chunk is confirmed as known.
    """
    chunks = [getattr(c, "rows", c) for c in chunks]
    det, first = OwaddDetector.initialize(chunks[0], config)
    verdicts = [first]
    streak = 0
    for chunk in chunks[1:]:
        verdict = det.process_chunk(chunk)
        verdicts.append(verdict)
        if auto_confirm is not None:
            fraction, consecutive = auto_confirm
            streak = streak + 1 if verdict.unknown_count / len(verdict.labels) > fraction else 0
            if streak >= consecutive:
                det.confirm_novelty(chunk)
                streak = 0
    return verdicts
