"""Comparison methods for the harness.

KSDD reduces each sample to its mean feature value and runs a two-sample KS
test between a reference window and a sliding current window. The centroid
baseline labels a sample unknown when it falls outside the 95th-percentile
radius of its nearest k-means centroid fitted on the first chunk.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .stats import ks_two_sample


@dataclass
class KsddDetector:
    window_size: int = 200
    threshold: float = 0.005
    n_features: int | None = None
    reference: np.ndarray = field(default_factory=lambda: np.zeros(0))
    current: deque = field(default_factory=deque)

    def _reduce(self, chunk) -> np.ndarray:
        x = np.asarray(chunk, dtype=float)
        if x.ndim != 2:
            raise ValueError("chunk must be 2-D")
        if self.n_features is None:
            self.n_features = x.shape[1]
        elif x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        return x.mean(axis=1)

    def initialize(self, first_chunk) -> None:
        means = self._reduce(first_chunk)
        self.reference = means[-self.window_size:].copy()
        self.current = deque(maxlen=self.window_size)

    def process_chunk(self, chunk) -> bool:
        """Feed one chunk sample by sample; True if any test in it fired."""
        drift = False
        for value in self._reduce(chunk):
            if self.reference.size < self.window_size:
                self.reference = np.append(self.reference, value)
                continue
            self.current.append(value)
            if len(self.current) < self.window_size:
                continue
            if ks_two_sample(self.reference, np.fromiter(self.current, float)).p_value < self.threshold:
                drift = True
                self.reference = np.fromiter(self.current, float)
                self.current.clear()
        return drift


def _farthest_point_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.shape[0])]]
    for _ in range(1, k):
        dist = np.min(((x[:, None, :] - np.asarray(centers)[None]) ** 2).sum(-1), axis=1)
        centers.append(x[int(np.argmax(dist))])
    return np.asarray(centers)


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm from farthest-point seeding. Returns (centers, assignment)."""
    x = np.asarray(x, dtype=float)
    if not 1 <= k <= x.shape[0]:
        raise ValueError(f"k must be in [1, {x.shape[0]}]")
    centers = _farthest_point_init(x, k, np.random.default_rng(seed))
    assign = None
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
        new_assign = d2.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers, assign


@dataclass
class CentroidNovelty:
    centroids: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        if len(self.centroids) == 0:
            raise ValueError("need at least one centroid")
        if np.any(self.radii <= 0):
            raise ValueError("radii must be positive")

    @classmethod
    def fit(cls, chunk, n_clusters: int = 2, seed: int = 0, quantile: float = 95.0) -> "CentroidNovelty":
        x = np.asarray(chunk, dtype=float)
        centers, assign = kmeans(x, n_clusters, seed)
        dist = np.linalg.norm(x - centers[assign], axis=1)
        radii = np.empty(len(centers))
        for j in range(len(centers)):
            member = dist[assign == j]
            radii[j] = np.percentile(member, quantile) if member.size else 0.0
        # empty or single-point clusters still need a usable radius
        fallback = np.percentile(dist, quantile) if np.any(dist > 0) else 1.0
        radii[~(radii > 0)] = fallback
        return cls(centers, radii)

    def labels(self, chunk) -> np.ndarray:
        """1 known, 0 unknown."""
        x = np.asarray(chunk, dtype=float)
        dist = np.linalg.norm(x[:, None, :] - self.centroids[None], axis=-1)
        nearest = dist.argmin(axis=1)
        inside = dist[np.arange(x.shape[0]), nearest] <= self.radii[nearest]
        return inside.astype(np.int8)
