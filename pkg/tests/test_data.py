import numpy as np
import pytest

from fedsim.data import (
    Dataset,
    IdxBadMagicError,
    IdxCountMismatchError,
    IdxFormatError,
    IdxTruncatedError,
    load_idx,
    merge,
    poison_labels,
    read_idx_images,
    read_idx_labels,
    shard_iid,
    stratified_split,
    synth_generate,
    write_idx_images,
    write_idx_labels,
)
from fedsim.model import ModelSpec, TrainSpec, evaluate, init_params, sgd_train


@pytest.fixture
def idx_pair(tmp_path):
    """A small valid IDX image/label pair on disk."""
    rng = np.random.default_rng(8)
    images = rng.integers(0, 256, size=(40, 7, 5), dtype=np.uint8)
    labels = rng.integers(0, 10, size=40, dtype=np.uint8)
    img_path = tmp_path / "images-idx3-ubyte"
    lab_path = tmp_path / "labels-idx1-ubyte"
    write_idx_images(img_path, images)
    write_idx_labels(lab_path, labels)
    return img_path, lab_path, images, labels


class TestIdx:
    def test_load_scales_and_counts(self, idx_pair):
        img_path, lab_path, images, labels = idx_pair
        ds = load_idx(img_path, lab_path)
        assert len(ds) == 40 and ds.dim == 35 and ds.class_count == 10
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0
        np.testing.assert_array_equal(ds.labels, labels)
        np.testing.assert_allclose(ds.features[0], images[0].ravel() / 255.0)

    def test_round_trip_is_byte_exact(self, idx_pair, tmp_path):
        img_path, lab_path, _, _ = idx_pair
        img2, lab2 = tmp_path / "im2", tmp_path / "lab2"
        write_idx_images(img2, read_idx_images(img_path))
        write_idx_labels(lab2, read_idx_labels(lab_path))
        assert img2.read_bytes() == img_path.read_bytes()
        assert lab2.read_bytes() == lab_path.read_bytes()

    def test_pixels_recoverable_after_scaling(self, idx_pair):
        img_path, lab_path, images, _ = idx_pair
        ds = load_idx(img_path, lab_path)
        recovered = np.rint(ds.features * 255.0).astype(np.uint8)
        np.testing.assert_array_equal(recovered, images.reshape(40, -1))

    def test_bad_magic(self, idx_pair, tmp_path):
        img_path, lab_path, _, _ = idx_pair
        bad = tmp_path / "bad"
        bad.write_bytes(b"\x00\x00\x08\x02" + img_path.read_bytes()[4:])
        with pytest.raises(IdxBadMagicError):
            load_idx(bad, lab_path)

    def test_labels_file_as_images_is_bad_magic(self, idx_pair):
        img_path, lab_path, _, _ = idx_pair
        with pytest.raises(IdxBadMagicError):
            read_idx_images(lab_path)

    def test_truncated(self, idx_pair, tmp_path):
        img_path, lab_path, _, _ = idx_pair
        cut = tmp_path / "cut"
        cut.write_bytes(img_path.read_bytes()[:-10])
        with pytest.raises(IdxTruncatedError):
            load_idx(cut, lab_path)

    def test_trailing_bytes_rejected(self, idx_pair, tmp_path):
        img_path, lab_path, _, _ = idx_pair
        fat = tmp_path / "fat"
        fat.write_bytes(img_path.read_bytes() + b"\x00")
        with pytest.raises(IdxFormatError):
            load_idx(fat, lab_path)

    def test_count_mismatch(self, idx_pair, tmp_path):
        img_path, lab_path, _, labels = idx_pair
        short = tmp_path / "short-labels"
        write_idx_labels(short, labels[:-1])
        with pytest.raises(IdxCountMismatchError):
            load_idx(img_path, short)

    def test_label_out_of_range(self, idx_pair, tmp_path):
        img_path, _, _, labels = idx_pair
        bad = labels.copy()
        bad[0] = 11
        lab_path = tmp_path / "bad-labels"
        write_idx_labels(lab_path, bad)
        with pytest.raises(IdxFormatError):
            load_idx(img_path, lab_path)


class TestSynthGenerate:
    def test_balanced_split(self):
        ds = synth_generate(2, 10, 2, 1)
        assert len(ds) == 10
        np.testing.assert_array_equal(ds.class_counts(), [5, 5])

    def test_deterministic(self):
        a = synth_generate(4, 100, 6, 3)
        b = synth_generate(4, 100, 6, 3)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_near_equal_counts_when_not_divisible(self):
        counts = synth_generate(3, 10, 2, 0).class_counts()
        assert counts.max() - counts.min() <= 1 and counts.sum() == 10

    @pytest.mark.parametrize("kwargs", [
        dict(class_count=1, n=10, dim=2, seed=0),
        dict(class_count=3, n=2, dim=2, seed=0),
        dict(class_count=2, n=10, dim=0, seed=0),
    ])
    def test_parameter_validation(self, kwargs):
        with pytest.raises(ValueError):
            synth_generate(**kwargs)

    def test_blobs_are_learnable(self):
        # a 2-layer (linear) softmax model separates sigma-0.3 blobs almost fully
        ds = synth_generate(3, 3000, 10, 4)
        spec = ModelSpec((10, 3))
        ts = TrainSpec(learning_rate=1.0, local_epochs=20, batch_size=64, seed=2)
        trained = sgd_train(init_params(spec, 0), spec, ds, ts)
        acc, _ = evaluate(trained, spec, ds)
        assert acc >= 0.95


class TestShardIid:
    def test_even_split(self):
        ds = synth_generate(2, 100, 3, 5)
        shards = shard_iid(ds, 10, 1)
        assert len(shards) == 10
        assert all(len(s) == 10 for s in shards)

    def test_single_shard_is_permutation(self):
        ds = synth_generate(2, 20, 3, 5)
        (shard,) = shard_iid(ds, 1, 2)
        assert sorted(map(tuple, shard.features)) == sorted(map(tuple, ds.features))

    def test_multiset_union_and_disjointness(self):
        ds = synth_generate(3, 53, 4, 9)
        shards = shard_iid(ds, 7, 3)
        sizes = [len(s) for s in shards]
        assert max(sizes) - min(sizes) <= 1 and sum(sizes) == 53
        rows = sorted(
            tuple(f) + (l,) for s in shards for f, l in zip(s.features, s.labels)
        )
        original = sorted(tuple(f) + (l,) for f, l in zip(ds.features, ds.labels))
        assert rows == original

    def test_too_many_shards(self):
        ds = synth_generate(2, 5, 2, 1)
        with pytest.raises(ValueError):
            shard_iid(ds, 6, 0)


class TestPoisonLabels:
    def test_no_source_examples_gives_empty_aux(self):
        ds = Dataset(np.ones((4, 2)), np.array([0, 0, 1, 1]), 3)
        assert len(poison_labels(ds, 2, 0)) == 0

    def test_relabels_and_keeps_features(self):
        ds = synth_generate(10, 200, 5, 11)
        aux = poison_labels(ds, 4, 7)
        assert len(aux) == int((ds.labels == 4).sum())
        assert np.all(aux.labels == 7)
        np.testing.assert_array_equal(aux.features, ds.features[ds.labels == 4])

    def test_same_class_rejected(self, tiny_data):
        with pytest.raises(ValueError):
            poison_labels(tiny_data, 1, 1)

    def test_out_of_range_rejected(self, tiny_data):
        with pytest.raises(ValueError):
            poison_labels(tiny_data, 0, 5)


class TestStratifiedSplit:
    def test_sizes_and_disjointness(self):
        ds = synth_generate(10, 1000, 4, 13)
        sel, rest = stratified_split(ds, 100, 7)
        assert len(sel) == 100 and len(rest) == 900
        np.testing.assert_array_equal(sel.class_counts(), np.full(10, 10))

    def test_deterministic(self):
        ds = synth_generate(5, 500, 4, 13)
        a, _ = stratified_split(ds, 50, 3)
        b, _ = stratified_split(ds, 50, 3)
        assert np.array_equal(a.features, b.features)

    def test_unbalanced_classes_get_proportional_quota(self):
        labels = np.array([0] * 90 + [1] * 10)
        ds = Dataset(np.arange(200, dtype=float).reshape(100, 2), labels, 2)
        sel, _ = stratified_split(ds, 20, 1)
        counts = sel.class_counts()
        assert counts[0] == 18 and counts[1] == 2


class TestMerge:
    def test_concatenates(self, tiny_data):
        both = merge(tiny_data, tiny_data)
        assert len(both) == 2 * len(tiny_data)

    def test_class_count_mismatch(self, tiny_data):
        other = Dataset(np.ones((2, 5)), np.array([0, 1]), 7)
        with pytest.raises(ValueError):
            merge(tiny_data, other)


class TestDatasetInvariants:
    def test_immutable_arrays(self, tiny_data):
        with pytest.raises(ValueError):
            tiny_data.features[0, 0] = 99.0

    def test_label_range_enforced(self):
        with pytest.raises(ValueError):
            Dataset(np.ones((2, 2)), np.array([0, 5]), 3)
