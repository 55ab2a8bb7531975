import numpy as np
import pytest

from boxsplit.data import build_dataset, intermediate_sets, load_dataset, save_dataset
from boxsplit.hierarchy import replay_records


@pytest.fixture(scope="module")
def small_dataset():
    return build_dataset("table", count=40, seed=7)


class TestBuildDataset:
    def test_split_ratio(self, small_dataset):
        ds = small_dataset
        assert len(ds.tree_indices("train")) == 32
        assert len(ds.tree_indices("val")) == 8

    def test_normalization_on_train_only(self, small_dataset):
        ds = small_dataset
        rows = np.vstack(
            [n.box.params() for i in ds.tree_indices("train") for n in ds.trees[i].nodes]
        )
        standardized = ds.standardize(rows)
        assert np.max(np.abs(standardized.mean(axis=0))) < 1e-6
        assert np.max(np.abs(standardized.std(axis=0) - 1.0)) < 1e-6

    def test_standardize_roundtrip(self, small_dataset):
        ds = small_dataset
        rows = ds.records("train")[0].context
        assert np.allclose(ds.destandardize(ds.standardize(rows)), rows, atol=1e-12)

    def test_records_replay(self, small_dataset):
        ds = small_dataset
        for i in ds.tree_indices("val"):
            from boxsplit.hierarchy import extract_records

            recs = extract_records(ds.trees[i])
            final = replay_records(recs)
            leaves = np.stack([b.params() for b in ds.trees[i].leaf_boxes()])
            got = np.array(sorted(map(tuple, np.round(final, 12))))
            want = np.array(sorted(map(tuple, np.round(leaves, 12))))
            assert np.allclose(got, want, atol=1e-9)

    def test_deterministic(self):
        a = build_dataset("chair", count=10, seed=3)
        b = build_dataset("chair", count=10, seed=3)
        assert a.split == b.split
        assert np.array_equal(a.mean, b.mean)
        for ta, tb in zip(a.trees, b.trees):
            for na, nb in zip(ta.nodes, tb.nodes):
                assert np.array_equal(na.box.params(), nb.box.params())


class TestDatasetIO:
    def test_save_load_roundtrip(self, small_dataset, tmp_path):
        ds = small_dataset
        manifest = save_dataset(ds, str(tmp_path))
        back = load_dataset(manifest)
        assert back.family == ds.family
        assert back.seed == ds.seed
        assert back.split == ds.split
        assert np.array_equal(back.mean, ds.mean)
        assert np.array_equal(back.scale, ds.scale)
        assert len(back.trees) == len(ds.trees)
        for ta, tb in zip(ds.trees, back.trees):
            for na, nb in zip(ta.nodes, tb.nodes):
                assert np.array_equal(na.box.params(), nb.box.params())

    def test_manifest_header(self, small_dataset, tmp_path):
        manifest = save_dataset(small_dataset, str(tmp_path))
        with open(manifest) as fh:
            assert fh.readline().strip() == "boxsplit-dataset v1"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "dataset.txt"
        path.write_text("wrong v1\n")
        with pytest.raises(ValueError):
            load_dataset(str(path))


class TestIntermediateSets:
    def test_sizes_run_one_to_leafcount(self, small_dataset):
        tree = small_dataset.trees[0]
        sets = intermediate_sets(tree)
        n_leaves = len(tree.leaf_ids())
        assert [s.shape[0] for s in sets] == list(range(1, n_leaves + 1))
        final = np.array(sorted(map(tuple, np.round(sets[-1], 12))))
        leaves = np.array(
            sorted(map(tuple, np.round([b.params() for b in tree.leaf_boxes()], 12)))
        )
        assert np.allclose(final, leaves, atol=1e-9)
