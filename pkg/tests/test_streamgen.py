import csv
import struct

import numpy as np
import pytest

from owadd import streamgen as sg
from owadd.streamgen import DRIFT, NOVELTY, StreamConfig


def small(**kw) -> StreamConfig:
    base = dict(n_chunks=30, chunk_size=40, n_features=6)
    base.update(kw)
    return StreamConfig(**base)


def class_means(chunk, ids, n_classes):
    return np.stack([chunk.rows[ids == c].mean(axis=0) for c in range(n_classes)])


class TestConfig:
    def test_defaults(self):
        cfg = StreamConfig()
        assert (cfg.n_chunks, cfg.chunk_size, cfg.n_features, cfg.n_known_classes) == (200, 200, 50, 2)

    @pytest.mark.parametrize("kw", [
        {"n_chunks": 5, "n_drifts": 3, "n_novelties": 2},
        {"chunk_size": 0},
        {"novel_proportion": 1.0},
        {"class_separation": 0.0},
        {"n_drifts": -1},
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            StreamConfig(**kw)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            StreamConfig.from_dict({"n_chunk": 3})

    def test_dict_round_trip(self):
        cfg = small(n_drifts=2, seed=4)
        assert StreamConfig.from_dict(cfg.to_dict()) == cfg


class TestSchedule:
    def test_mixed_example(self):
        events = sg.event_schedule(StreamConfig(n_chunks=100, n_drifts=1, n_novelties=5))
        assert [i for i, _ in events] == [14, 28, 42, 57, 71, 85]
        assert [k for _, k in events] == [NOVELTY, DRIFT, NOVELTY, NOVELTY, NOVELTY, NOVELTY]

    def test_drift_only(self):
        events = sg.event_schedule(StreamConfig(n_chunks=200, n_drifts=5))
        assert events == [(33, DRIFT), (66, DRIFT), (100, DRIFT), (133, DRIFT), (166, DRIFT)]

    def test_empty(self):
        assert sg.event_schedule(StreamConfig()) == []

    def test_alternation(self):
        kinds = [k for _, k in sg.event_schedule(StreamConfig(n_drifts=2, n_novelties=3))]
        assert kinds == [NOVELTY, DRIFT, NOVELTY, DRIFT, NOVELTY]

    def test_crowded_schedule_is_valid(self):
        cfg = StreamConfig(n_chunks=10, n_drifts=4, n_novelties=5)
        idx = [i for i, _ in sg.event_schedule(cfg)]
        assert len(set(idx)) == 9
        assert min(idx) >= 1 and max(idx) <= 9

    def test_seed_independent(self):
        assert sg.event_schedule(small(n_drifts=3, seed=1)) == sg.event_schedule(small(n_drifts=3, seed=99))


class TestSplits:
    def test_recency(self):
        assert list(sg.recency_weights(1)) == [1.0]
        assert list(sg.recency_weights(3)) == [0.25, 0.25, 0.5]

    def test_largest_remainder(self):
        counts = sg._split_counts(40, sg.recency_weights(3))
        assert counts.sum() == 40 and list(counts) == [10, 10, 20]
        assert list(sg._split_counts(7, np.ones(2))) == [4, 3]


class TestGenerate:
    def test_shapes(self):
        chunks, truth = sg.generate_stream(small())
        assert len(chunks) == 30
        assert all(c.rows.shape == (40, 6) and c.index == i for i, c in enumerate(chunks))
        assert truth.events == []
        assert all(np.isfinite(c.rows).all() for c in chunks)

    def test_determinism(self):
        a, ta = sg.generate_stream(small(n_novelties=2, seed=3))
        b, tb = sg.generate_stream(small(n_novelties=2, seed=3))
        assert all(np.array_equal(x.rows, y.rows) for x, y in zip(a, b))
        assert ta == tb

    def test_seed_changes_data(self):
        a, _ = sg.generate_stream(small(seed=0))
        b, _ = sg.generate_stream(small(seed=1))
        assert not np.array_equal(a[0].rows, b[0].rows)

    def test_unknown_rows_example(self):
        # 200 rows at proportion 0.2 -> 40 unknown rows per chunk once a novelty is active
        cfg = StreamConfig(n_chunks=20, chunk_size=200, n_features=5, n_novelties=1)
        _, truth = sg.generate_stream(cfg)
        first = truth.event_chunks[0]
        assert all(truth.unknown[n].sum() == 0 for n in range(first))
        assert all(truth.unknown[n].sum() == 40 for n in range(first, 20))

    @pytest.mark.parametrize("p", [0.05, 0.2, 0.3])
    def test_proportion_law(self, p):
        cfg = StreamConfig(n_chunks=60, chunk_size=200, n_features=4, n_novelties=5, novel_proportion=p)
        _, truth = sg.generate_stream(cfg)
        first = truth.event_chunks[0]
        active = 0
        for n in range(first, 60):
            active += n in truth.novelty_classes
            assert abs(truth.unknown[n].mean() * 200 - p * 200) <= active

    def test_novel_classes_stay_unknown(self):
        cfg = small(n_novelties=3, seed=2)
        _, truth = sg.generate_stream(cfg)
        for n in range(cfg.n_chunks):
            assert np.array_equal(truth.unknown[n], truth.class_ids[n] >= cfg.n_known_classes)

    def test_recency_in_rows(self):
        cfg = StreamConfig(n_chunks=10, chunk_size=200, n_features=3, n_novelties=3)
        _, truth = sg.generate_stream(cfg)
        ids = truth.class_ids[9]
        assert [int((ids == c).sum()) for c in (2, 3, 4)] == [10, 10, 20]

    def test_drift_law(self):
        cfg = StreamConfig(n_chunks=12, chunk_size=400, n_features=8, n_drifts=1, class_separation=3.0, seed=5)
        chunks, truth = sg.generate_stream(cfg)
        (drift_at,) = truth.event_chunks
        means = [class_means(chunks[n], truth.class_ids[n], 2) for n in range(12)]
        # 200 rows per class -> class-mean noise around 0.07 per feature
        same = np.abs(means[drift_at - 2] - means[drift_at - 1]).max()
        moved = np.linalg.norm(means[drift_at - 1] - means[drift_at], axis=1).min()
        assert same < 0.5
        assert moved > 3.0

    def test_separation_scaling(self):
        ratios = []
        for seed in range(10):
            dist = {}
            for s in (1.0, 3.0):
                chunks, truth = sg.generate_stream(StreamConfig(n_chunks=2, class_separation=s, seed=seed))
                m = class_means(chunks[0], truth.class_ids[0], 2)
                dist[s] = np.linalg.norm(m[0] - m[1])
            ratios.append((dist[3.0], dist[1.0]))
        num, den = np.mean(ratios, axis=0)
        assert 2.5 <= num / den <= 3.5


class TestFiles:
    @pytest.fixture
    def stream(self, tmp_path):
        cfg = small(n_drifts=1, n_novelties=2, seed=7)
        chunks, truth = sg.generate_stream(cfg)
        path = tmp_path / "s.ows"
        sg.write_stream(chunks, truth, path, cfg)
        return cfg, chunks, truth, path

    def test_round_trip(self, stream):
        cfg, chunks, truth, path = stream
        chunks2, truth2 = sg.read_stream(path)
        assert all(np.array_equal(a.rows, b.rows) and a.index == b.index for a, b in zip(chunks, chunks2))
        assert truth2 == truth
        assert sg.read_stream_header(path)["config"] == cfg.to_dict()

    def test_without_truth(self, stream):
        _, chunks, _, path = stream
        sg.truth_path(path).unlink()
        read, truth = sg.read_stream(path, with_truth=False)
        assert truth is None and len(read) == len(chunks)

    def test_byte_identical(self, tmp_path):
        cfg = small(n_novelties=1, seed=11)
        for name in ("a.ows", "b.ows"):
            sg.write_stream(*sg.generate_stream(cfg), tmp_path / name, cfg)
        assert (tmp_path / "a.ows").read_bytes() == (tmp_path / "b.ows").read_bytes()
        assert sg.truth_path(tmp_path / "a.ows").read_bytes() == sg.truth_path(tmp_path / "b.ows").read_bytes()

    def test_truncated(self, stream):
        *_, path = stream
        data = path.read_bytes()
        path.write_bytes(data[:-13])
        with pytest.raises(sg.TruncatedStreamError):
            sg.read_stream(path)

    def test_bad_magic(self, stream):
        *_, path = stream
        path.write_bytes(b"NOTASTRM" + path.read_bytes()[8:])
        with pytest.raises(sg.MalformedStreamError):
            sg.read_stream(path)

    def test_version_mismatch(self, stream):
        *_, path = stream
        data = bytearray(path.read_bytes())
        data[8:10] = struct.pack("<H", 99)
        path.write_bytes(bytes(data))
        with pytest.raises(sg.StreamVersionError):
            sg.read_stream(path)

    def test_errors_are_distinct(self):
        kinds = {sg.MalformedStreamError, sg.StreamVersionError, sg.TruncatedStreamError}
        assert all(issubclass(k, sg.StreamFileError) for k in kinds)
        assert len(kinds) == 3

    def test_csv_export(self, stream, tmp_path):
        cfg, chunks, truth, _ = stream
        out = tmp_path / "s.csv"
        sg.export_csv(chunks, truth, out)
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + cfg.n_chunks * cfg.chunk_size
        assert len(rows[1]) == 3 + cfg.n_features
