import numpy as np
import pytest

from wsseg.core import ClassCatalog, PointCloud
from wsseg.io import (DataError, read_catalog, read_cloud, read_key_values, read_weak_labels,
                      write_catalog, write_cloud, write_key_values, write_weak_labels)
from wsseg.synth import SceneSpec
from wsseg.trainer import TrainSchedule
from wsseg.weak_labels import WeakLabelSet


def small_cloud(n=20, f=2, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.normal(size=(n, 3)), rng.uniform(size=(n, f))), rng.integers(0, 4, n)


class TestCloud:
    @pytest.mark.parametrize("suffix", [".txt", ".bin"])
    def test_round_trip(self, tmp_path, suffix):
        cloud, labels = small_cloud()
        path = tmp_path / f"c{suffix}"
        write_cloud(path, cloud, labels)
        back, lab = read_cloud(path)
        np.testing.assert_array_equal(back.coords, cloud.coords)
        np.testing.assert_array_equal(back.features, cloud.features)
        np.testing.assert_array_equal(lab, labels)

    def test_unlabeled(self, tmp_path):
        cloud, _ = small_cloud(f=0)
        write_cloud(tmp_path / "c.txt", cloud)
        back, lab = read_cloud(tmp_path / "c.txt")
        assert lab is None and back.feature_count == 0

    def test_bad_row_names_line(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# columns=4 features=1 has_label=0\n0 0 0 1\n0 0 0\n")
        with pytest.raises(DataError, match=":3:"):
            read_cloud(path)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("0 0 0\n")
        with pytest.raises(DataError):
            read_cloud(path)

    def test_column_count_inconsistent(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# columns=7 features=1 has_label=0\n")
        with pytest.raises(DataError):
            read_cloud(path)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# columns=3 features=0 has_label=0\n1 2 x\n")
        with pytest.raises(DataError, match=":2:"):
            read_cloud(path)


class TestWeakLabels:
    def test_round_trip(self, tmp_path):
        weak = WeakLabelSet(np.array([2, 5, 9]), np.array([1, 0, 1]), 2, 10, seed=4)
        write_weak_labels(tmp_path / "w.txt", weak)
        back = read_weak_labels(tmp_path / "w.txt")
        np.testing.assert_array_equal(back.labeled_indices, weak.labeled_indices)
        np.testing.assert_array_equal(back.labels, weak.labels)
        assert back.per_class_cap == 2 and back.total_points == 10 and back.seed == 4

    def test_bad_entry(self, tmp_path):
        path = tmp_path / "w.txt"
        path.write_text("# cap=1 points=5\n1 0 7\n")
        with pytest.raises(DataError):
            read_weak_labels(path)


class TestKeyValues:
    def test_round_trip_schedule(self, tmp_path):
        s = TrainSchedule(epochs_per_stage=3, hidden=(8, 4), use_pl=False, learning_rate=0.5)
        write_key_values(tmp_path / "s.txt", s)
        assert read_key_values(tmp_path / "s.txt", TrainSchedule) == s

    def test_comments_and_defaults(self, tmp_path):
        path = tmp_path / "scene.txt"
        path.write_text("# small scene\nextent = 20  # metres\n\nseed=7\n")
        spec = read_key_values(path, SceneSpec)
        assert spec.extent == 20.0 and spec.seed == 7 and spec.tree_count == SceneSpec().tree_count

    @pytest.mark.parametrize("text", ["bogus=1\n", "extent\n", "extent=abc\n", "density=0\n"])
    def test_rejects(self, tmp_path, text):
        path = tmp_path / "scene.txt"
        path.write_text(text)
        with pytest.raises(DataError):
            read_key_values(path, SceneSpec)


class TestCatalog:
    def test_round_trip(self, tmp_path):
        cat = ClassCatalog(("ground", "roof", "tree"))
        write_catalog(tmp_path / "c.txt", cat)
        assert read_catalog(tmp_path / "c.txt") == cat

    def test_duplicate(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("a\na\n")
        with pytest.raises(DataError):
            read_catalog(path)
