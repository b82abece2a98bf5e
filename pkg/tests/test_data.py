import gzip

import numpy as np
import pytest

from src.core.data_processor import (MNIST_FILES, Dataset, MaskSpec, apply_mask, batch_stream, batches, load_idx,
                                     load_mnist, shuffled_order)
from src.core.errors import ConfigurationError, ConsistencyError, FormatError
from src.core.tensor import Tensor
from tests.conftest import write_idx_images, write_idx_labels


@pytest.fixture
def idx_pair(tmp_path):
    pixels = np.zeros((3, 4, 5), dtype=np.uint8)
    pixels[0, 0, 0] = 255
    pixels[1, 2, 3] = 128
    write_idx_images(tmp_path / "images", pixels)
    write_idx_labels(tmp_path / "labels", [7, 0, 9])
    return tmp_path / "images", tmp_path / "labels"


def make_dataset(n: int) -> Dataset:
    return Dataset(Tensor(np.arange(n * 4, dtype=np.float32).reshape(n, 1, 2, 2) / (n * 4)), np.arange(n) % 10)


class TestLoadIdx:
    def test_header_and_scaling(self, idx_pair):
        images, labels = idx_pair
        assert images.read_bytes()[:4] == bytes([0, 0, 8, 3])
        ds = load_idx(images, labels, "test")
        assert ds.images.shape == (3, 1, 4, 5)
        assert ds.images.numpy()[0, 0, 0, 0] == 1.0
        assert ds.images.numpy()[2].max() == 0.0
        assert ds.images.numpy()[1, 0, 2, 3] == pytest.approx(128 / 255)
        np.testing.assert_array_equal(ds.labels, [7, 0, 9])
        assert ds.split == "test" and len(ds) == 3

    def test_wrong_magic_names_both(self, idx_pair):
        images, labels = idx_pair
        with pytest.raises(FormatError, match="2049.*2051|expected 2051"):
            load_idx(labels, images)

    def test_truncated(self, idx_pair):
        images, labels = idx_pair
        images.write_bytes(images.read_bytes()[:-1])
        with pytest.raises(FormatError):
            load_idx(images, labels)

    def test_count_mismatch(self, idx_pair, tmp_path):
        images, _ = idx_pair
        write_idx_labels(tmp_path / "short", [1, 2])
        with pytest.raises(ConsistencyError):
            load_idx(images, tmp_path / "short")

    def test_loading_twice_is_bit_identical(self, idx_pair):
        a, b = load_idx(*idx_pair), load_idx(*idx_pair)
        assert a.images.numpy().tobytes() == b.images.numpy().tobytes()


class TestLoadMnist:
    def test_small_split_fails_count_check(self, mnist_dir):
        with pytest.raises(ConsistencyError):
            load_mnist(mnist_dir, "train")
        assert len(load_mnist(mnist_dir, "train", check_counts=False)) == 60

    def test_gzipped_files(self, mnist_dir):
        for name in MNIST_FILES["test"]:
            path = mnist_dir / name
            with gzip.open(mnist_dir / f"{name}.gz", "wb") as f:
                f.write(path.read_bytes())
            path.unlink()
        assert len(load_mnist(mnist_dir, "test", check_counts=False)) == 30

    def test_missing_files(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_mnist(tmp_path, "test")

    def test_unknown_split(self, mnist_dir):
        with pytest.raises(ConfigurationError):
            load_mnist(mnist_dir, "validation")


class TestBatches:
    def test_sizes_keep_short_batch(self):
        sizes = [len(labels) for _, labels in batches(make_dataset(10), 3, seed=0)]
        assert sizes == [3, 3, 3, 1]

    def test_same_seed_same_order(self):
        first = [labels.tolist() for _, labels in batches(make_dataset(20), 4, seed=5)]
        second = [labels.tolist() for _, labels in batches(make_dataset(20), 4, seed=5)]
        assert first == second

    def test_epoch_covers_dataset_once(self):
        ds = make_dataset(23)
        seen = np.concatenate([images.numpy() for images, _ in batches(ds, 5, seed=1)])
        assert sorted(seen.reshape(23, -1)[:, 0].tolist()) == sorted(ds.images.numpy().reshape(23, -1)[:, 0].tolist())

    def test_order_is_a_permutation(self):
        order = shuffled_order(50, seed=3, epoch=2)
        assert sorted(order.tolist()) == list(range(50))
        assert not np.array_equal(order, shuffled_order(50, seed=3, epoch=3))

    def test_invalid_batch_size(self):
        with pytest.raises(ConfigurationError):
            list(batches(make_dataset(4), 0, seed=0))

    def test_stream_crosses_epochs(self):
        stream = batch_stream(make_dataset(4), 3, seed=0)
        assert [len(next(stream)[1]) for _ in range(4)] == [3, 1, 3, 1]

    def test_empty_stream(self):
        with pytest.raises(ConfigurationError):
            next(batch_stream(make_dataset(0), 3, seed=0))

    def test_subset(self):
        sub = make_dataset(10).subset(4, offset=2)
        np.testing.assert_array_equal(sub.labels, [2, 3, 4, 5])


class TestMask:
    @pytest.fixture
    def images(self):
        return Tensor(np.random.default_rng(0).uniform(size=(3, 1, 28, 28)))

    def test_zero_area_is_identity(self, images):
        out = apply_mask(images, MaskSpec(row0=5, col0=5, height=0, width=4))
        assert out.numpy().tobytes() == images.numpy().tobytes()

    def test_full_mask(self, images):
        out = apply_mask(images, MaskSpec(row0=0, col0=0, height=28, width=28, fill=0.0))
        assert not out.numpy().any()

    def test_complement_untouched_and_idempotent(self, images):
        spec = MaskSpec()
        once = apply_mask(images, spec).numpy()
        region = spec.region(28, 28)
        np.testing.assert_array_equal(once[..., ~region], images.numpy()[..., ~region])
        assert np.all(once[..., region] == 0.0)
        np.testing.assert_array_equal(apply_mask(Tensor(once), spec).numpy(), once)

    def test_out_of_bounds(self, images):
        with pytest.raises(ConfigurationError):
            apply_mask(images, MaskSpec(row0=20, height=9))
