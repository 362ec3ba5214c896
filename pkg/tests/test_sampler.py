import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from episodic_nca.numerics import RngStream
from episodic_nca.sampler import (
    BatchShapeConfig,
    EpisodeConfig,
    LabeledDataset,
    epoch_batches,
    sample_episode,
    sample_fixed_composition_batch,
    sample_replacement_batch,
    shape_to_episode,
)


def make_ds(classes, per_class, dim=2, split="train"):
    labels = np.repeat(np.arange(classes), per_class)
    feats = np.arange(labels.size * dim, dtype=float).reshape(-1, dim)
    return LabeledDataset(feats, labels, split)


class TestLabeledDataset:
    def test_dense_labels(self):
        with pytest.raises(ValueError, match="dense"):
            LabeledDataset(np.zeros((3, 2)), [0, 2, 2])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((3, 2)), [0, 1])

    def test_class_indices(self):
        ds = LabeledDataset(np.zeros((5, 1)), [1, 0, 1, 0, 1])
        assert [i.tolist() for i in ds.class_indices] == [[1, 3], [0, 2, 4]]


class TestEpisodeConfig:
    @pytest.mark.parametrize("w,n,m", [(1, 1, 1), (2, 0, 1), (2, 1, 0)])
    def test_invalid(self, w, n, m):
        with pytest.raises(ValueError):
            EpisodeConfig(w, n, m)

    def test_size(self):
        assert EpisodeConfig(30, 1, 15).size == 480
        assert EpisodeConfig(20, 5, 15).size == 400


class TestShapeToEpisode:
    @pytest.mark.parametrize("shape,expected", [
        ((5, 8, 256), (32, 5, 3)),
        ((1, 8, 128), (16, 1, 7)),
        ((5, 16, 512), (32, 5, 11)),
    ])
    def test_examples(self, shape, expected):
        ep = shape_to_episode(BatchShapeConfig(*shape))
        assert (ep.ways, ep.shots, ep.queries) == expected
        assert ep.size == shape[2]

    @pytest.mark.parametrize("shape", [(5, 8, 100), (8, 8, 64), (1, 8, 8)])
    def test_invalid(self, shape):
        with pytest.raises(ValueError):
            BatchShapeConfig(*shape)

    @given(st.integers(1, 10), st.integers(1, 20), st.integers(2, 40))
    def test_round_trip(self, n, extra, w):
        a = n + extra
        ep = shape_to_episode(BatchShapeConfig(n, a, a * w))
        assert ep.ways * (ep.shots + ep.queries) == a * w


class TestSampleEpisode:
    def test_small(self):
        ds = make_ds(5, 4)
        ep = sample_episode(ds, EpisodeConfig(2, 1, 1), RngStream(0))
        ep.check(EpisodeConfig(2, 1, 1))
        assert len(set(ep.support_idx) | set(ep.query_idx)) == 4

    @pytest.mark.parametrize("cfg,size", [((30, 1, 15), 480), ((20, 5, 15), 400)])
    def test_standard_training_episode_sizes(self, cfg, size):
        ds = make_ds(64, 20)
        ep = sample_episode(ds, EpisodeConfig(*cfg), RngStream(1))
        assert len(ep.support) + len(ep.query) == size

    def test_labels_match_dataset(self):
        ds = make_ds(6, 10)
        ep = sample_episode(ds, EpisodeConfig(3, 2, 3), RngStream(2))
        np.testing.assert_array_equal(ds.labels[ep.support_idx], ep.support_labels)
        np.testing.assert_array_equal(ds.labels[ep.query_idx], ep.query_labels)

    def test_names_deficient_class(self):
        labels = np.array([0] * 5 + [1] * 5 + [2] * 2)
        ds = LabeledDataset(np.zeros((12, 1)), labels)
        with pytest.raises(ValueError, match="class 2"):
            sample_episode(ds, EpisodeConfig(2, 2, 2), RngStream(0))

    def test_too_few_classes(self):
        with pytest.raises(ValueError, match="classes"):
            sample_episode(make_ds(3, 10), EpisodeConfig(4, 1, 1), RngStream(0))

    def test_reproducible(self):
        ds = make_ds(10, 10)
        a = sample_episode(ds, EpisodeConfig(5, 2, 2), RngStream(9).child("e", 4))
        b = sample_episode(ds, EpisodeConfig(5, 2, 2), RngStream(9).child("e", 4))
        assert a == b

    @given(
        classes=st.integers(2, 12), extra=st.integers(0, 4), w=st.integers(2, 12),
        n=st.integers(1, 4), m=st.integers(1, 4), seed=st.integers(0, 2**32),
    )
    @settings(max_examples=200, deadline=None)
    def test_invariants(self, classes, extra, w, n, m, seed):
        w = min(w, classes)
        cfg = EpisodeConfig(w, n, m)
        ds = make_ds(classes, n + m + extra)
        ep = sample_episode(ds, cfg, RngStream(seed))
        ep.check(cfg)
        assert not set(ep.support_idx.tolist()) & set(ep.query_idx.tolist())


class TestEpochBatches:
    def test_sizes(self):
        batches = epoch_batches(10, 4, RngStream(0))
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))

    def test_single_batch(self):
        (b,) = epoch_batches(6, 6, RngStream(0))
        assert sorted(b.tolist()) == list(range(6))

    def test_deterministic(self):
        a = epoch_batches(50, 8, RngStream(3))
        b = epoch_batches(50, 8, RngStream(3))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_batch_too_small(self):
        with pytest.raises(ValueError):
            epoch_batches(10, 1, RngStream(0))

    @given(st.integers(1, 500), st.integers(2, 600), st.integers(0, 2**32))
    @settings(max_examples=100, deadline=None)
    def test_exactly_once(self, n, b, seed):
        counts = np.bincount(np.concatenate(epoch_batches(n, b, RngStream(seed))), minlength=n)
        assert np.all(counts == 1)


class TestOtherBatches:
    @pytest.mark.parametrize("k,a", [(16, 8), (2, 1), (64, 16)])
    def test_fixed_composition(self, k, a):
        ds = make_ds(64, 20)
        idx = sample_fixed_composition_batch(ds, k, a, RngStream(0))
        assert idx.size == k * a
        labels, counts = np.unique(ds.labels[idx], return_counts=True)
        assert labels.size == k and np.all(counts == a)
        assert np.unique(idx).size == idx.size

    def test_fixed_infeasible(self):
        with pytest.raises(ValueError):
            sample_fixed_composition_batch(make_ds(4, 5), 5, 2, RngStream(0))
        with pytest.raises(ValueError):
            sample_fixed_composition_batch(make_ds(4, 5), 2, 6, RngStream(0))

    def test_replacement(self):
        ds = make_ds(4, 5)
        idx = sample_replacement_batch(ds, 8, RngStream(0))
        assert idx.size == 8 and np.unique(idx).size == 8
        with pytest.raises(ValueError):
            sample_replacement_batch(ds, 21, RngStream(0))
