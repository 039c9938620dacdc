"""Synthetic benchmark generators."""

import numpy as np
import pytest

from protoadapt.errors import ValidationError
from protoadapt.featurepack import save_feature_pack
from protoadapt.synth import (
    BenchmarkSpec,
    OutlierFixtureSpec,
    _spread_directions,
    benchmark_episode,
    make_benchmark_pack,
    planted_outlier_episode,
)
from protoadapt.rng import STREAM_SYNTH, stream


def pack_to_bytes(pack, tmp_dir="/tmp"):
    import os
    import tempfile

    fd, path = tempfile.mkstemp(suffix=".fpk", dir=tmp_dir)
    os.close(fd)
    try:
        save_feature_pack(pack, path)
        with open(path, "rb") as f:
            return f.read()
    finally:
        os.unlink(path)


class TestBenchmarkPack:
    def test_counts_and_roles(self):
        spec = BenchmarkSpec(n_classes=3, dim=8, per_class=4, n_background=5)
        pack = make_benchmark_pack(spec)
        objects = [r for r in pack.records if r.role == "object"]
        backgrounds = [r for r in pack.records if r.role == "background"]
        assert len(objects) == 12
        assert len(backgrounds) == 5
        assert pack.class_names == ["class-00", "class-01", "class-02"]
        per_class = [sum(r.class_index == c for r in objects) for c in range(3)]
        assert per_class == [4, 4, 4]
        assert all(r.box is not None for r in objects)

    def test_byte_identical_determinism(self):
        spec = BenchmarkSpec(n_classes=3, dim=8, per_class=4, n_background=5, seed=7)
        a = pack_to_bytes(make_benchmark_pack(spec))
        b = pack_to_bytes(make_benchmark_pack(spec))
        assert a == b
        c = pack_to_bytes(make_benchmark_pack(BenchmarkSpec(n_classes=3, dim=8, per_class=4, n_background=5, seed=8)))
        assert a != c

    def test_records_share_images_in_blocks(self):
        spec = BenchmarkSpec(n_classes=2, dim=8, per_class=4, n_background=0, records_per_image=4)
        pack = make_benchmark_pack(spec)
        image_ids = [r.image_id for r in pack.records]
        assert image_ids == ["img-0000"] * 4 + ["img-0001"] * 4

    def test_clusters_separate_after_rotation(self):
        # rigid rotation preserves within-class tightness and between-class angles
        spec = BenchmarkSpec(n_classes=3, dim=16, per_class=10, n_background=0, outlier_fraction=0.0, noise=0.1)
        pack = make_benchmark_pack(spec)
        unit = np.stack([r.embedding for r in pack.records])
        labels = np.array([r.class_index for r in pack.records])
        centers = np.stack([unit[labels == c].mean(axis=0) for c in range(3)])
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        sims = centers @ centers.T
        off_diag = sims[~np.eye(3, dtype=bool)]
        assert np.all(off_diag < 0.3)

    def test_corrupted_rows_sit_far_out(self):
        spec = BenchmarkSpec(n_classes=2, dim=16, per_class=10, n_background=0, outlier_fraction=0.2)
        pack = make_benchmark_pack(spec)
        raw = pack.raw.astype(np.float64)
        norms = np.linalg.norm(raw, axis=1)
        # 2 of 10 rows per class carry the displacement of norm ~outlier_scale
        assert (norms > 3.0).sum() == 4
        assert (norms < 3.0).sum() == 16

    def test_validation(self):
        with pytest.raises(ValidationError):
            BenchmarkSpec(n_classes=0)
        with pytest.raises(ValidationError):
            BenchmarkSpec(outlier_fraction=1.5)
        with pytest.raises(ValidationError):
            BenchmarkSpec(n_classes=10, dim=8)

    def test_canonical_episode(self):
        spec = BenchmarkSpec(n_classes=3, dim=8, per_class=6, n_background=10)
        episode = benchmark_episode(spec, k_shot=2, n_background=4)
        assert episode.n_way == 3
        assert episode.k_shot == 2
        assert len(episode.background_indices) == 4


class TestSpreadDirections:
    def test_unit_rows_even_when_crowded(self):
        rng = stream(0, STREAM_SYNTH)
        x = _spread_directions(rng, 5, 3)
        assert x.shape == (5, 3)
        np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-9)
        sims = x @ x.T
        off = sims[~np.eye(5, dtype=bool)]
        # repulsion keeps every pair at least ~45 degrees apart in R^3
        assert off.max() < 0.72

    def test_orthogonalizes_when_room_allows(self):
        rng = stream(1, STREAM_SYNTH)
        x = _spread_directions(rng, 3, 8)
        sims = x @ x.T
        off = sims[~np.eye(3, dtype=bool)]
        assert np.abs(off).max() < 0.05


class TestOutlierFixture:
    def test_returns_flagged_slot(self):
        episode, outlier_class, outlier_slot = planted_outlier_episode(OutlierFixtureSpec())
        assert outlier_class == 0
        assert outlier_slot == OutlierFixtureSpec().k_shot - 1
        assert episode.n_way == 5
        assert episode.k_shot == 5

    def test_outlier_sits_far_from_class_cluster(self):
        spec = OutlierFixtureSpec()
        episode, c, slot = planted_outlier_episode(spec)
        raw = episode.pack.raw.astype(np.float64)
        rows = [raw[i] for i in episode.support_indices[c]]
        clean = np.stack([r for k, r in enumerate(rows) if k != slot])
        center = clean.mean(axis=0)
        clean_spread = max(np.linalg.norm(r - center) for r in clean)
        outlier_distance = np.linalg.norm(rows[slot] - center)
        assert outlier_distance > 5 * clean_spread

    def test_query_records_cover_all_classes(self):
        spec = OutlierFixtureSpec()
        episode, _, _ = planted_outlier_episode(spec)
        labels = [
            episode.pack.records[i].class_index
            for per_image in episode.query_indices.values()
            for i in per_image
        ]
        for c in range(spec.n_classes):
            assert labels.count(c) == spec.n_query_per_class

    def test_deterministic(self):
        a, _, _ = planted_outlier_episode(OutlierFixtureSpec(seed=3))
        b, _, _ = planted_outlier_episode(OutlierFixtureSpec(seed=3))
        assert pack_to_bytes(a.pack) == pack_to_bytes(b.pack)
        assert a.support_indices == b.support_indices

    def test_validation(self):
        with pytest.raises(ValidationError):
            OutlierFixtureSpec(k_shot=1)
        with pytest.raises(ValidationError):
            OutlierFixtureSpec(n_classes=1)
