import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wordmerge.data import (DatasetError, HistogramDataset, MergeEvent, MergeTree, WordMap,
                            apply_merge_map, class_statistics, dataset_to_csv, load_dataset,
                            preprocess, save_dataset)


def write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_load_roundtrip(tmp_path):
    ds = HistogramDataset(np.array([[1.0, 0.5, 2.0], [0.1, 3.0, 0.0]]), np.array([1, 2]))
    p = tmp_path / "x.csv"
    save_dataset(ds, p)
    back = load_dataset(p)
    assert np.array_equal(back.counts, ds.counts)
    assert np.array_equal(back.labels, ds.labels)
    assert dataset_to_csv(back) == p.read_text()


def test_negative_value_reports_position(tmp_path):
    p = write(tmp_path, "label,w0,w1\n1,1,2\n2,3,-1\n")
    with pytest.raises(DatasetError, match=r"negative bin value at line 3, column 'w1'"):
        load_dataset(p)


def test_ragged_row(tmp_path):
    p = write(tmp_path, "label,w0,w1\n1,1,2\n2,3\n")
    with pytest.raises(DatasetError, match="ragged row"):
        load_dataset(p)


def test_single_class(tmp_path):
    p = write(tmp_path, "label,w0,w1\n1,1,2\n1,3,4\n")
    with pytest.raises(DatasetError, match="single class"):
        load_dataset(p)


def test_dataset_is_read_only():
    ds = HistogramDataset(np.ones((2, 2)), np.array([0, 1]))
    with pytest.raises(ValueError):
        ds.counts[0, 0] = 5


def test_preprocess_normalize_then_sqrt():
    ds = HistogramDataset(np.array([[1.0, 3.0], [2.0, 2.0]]), np.array([0, 1]))
    out = preprocess(ds, normalize=True, sqrt=True)
    assert np.allclose(out.counts, np.sqrt([[0.25, 0.75], [0.5, 0.5]]))
    assert np.allclose(preprocess(ds, normalize=True).counts.sum(axis=1), 1.0)


def test_preprocess_zero_row():
    ds = HistogramDataset(np.array([[0.0, 0.0], [2.0, 2.0]]), np.array([0, 1]))
    with pytest.raises(DatasetError, match="all-zero row"):
        preprocess(ds, normalize=True)


def test_class_statistics():
    h = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]])
    stats = class_statistics(HistogramDataset(h, np.array([2, 1, 2])))
    assert np.array_equal(stats.classes, [1, 2])
    assert np.array_equal(stats.sums, [[3, 4], [6, 2]])
    assert np.array_equal(stats.counts, [1, 2])


def test_word_map_validation():
    with pytest.raises(DatasetError):
        WordMap(np.array([0, 2, 2]))       # cluster 1 empty
    wm = WordMap.from_dict(json.loads(json.dumps(WordMap(np.array([1, 0, 1])).to_dict())))
    assert wm.k == 2


def test_apply_merge_map_dimension_check():
    ds = HistogramDataset(np.ones((2, 3)), np.array([0, 1]))
    with pytest.raises(DatasetError, match="covers 2 words"):
        apply_merge_map(ds, WordMap(np.array([0, 1])))


@given(st.integers(1, 6), st.integers(1, 7), st.data())
def test_apply_merge_map_preserves_row_totals(n, t, data):
    h = np.array(data.draw(st.lists(st.lists(st.floats(0, 100), min_size=t, max_size=t),
                                    min_size=n, max_size=n)))
    k = data.draw(st.integers(1, t))
    assign = np.array(list(range(k)) + data.draw(st.lists(st.integers(0, k - 1),
                                                           min_size=t - k, max_size=t - k)))
    ds = HistogramDataset(h, np.arange(n) % 2)
    out = apply_merge_map(ds, WordMap(assign))
    assert out.t == k
    assert np.allclose(out.counts.sum(axis=1), h.sum(axis=1))


def test_merge_tree_json_roundtrip_is_exact():
    tree = MergeTree(3, [MergeEvent(3, 0, 2, 3, 0.1 + 0.2), MergeEvent(2, 1, 3, 4, 1e-300)])
    tree.validate()
    text = tree.to_json({"config": {"criterion": "aib"}})
    back = MergeTree.from_json(text)
    assert [m.loss for m in back.merges] == [m.loss for m in tree.merges]
    assert back.to_json({"config": {"criterion": "aib"}}) == text
    assert json.loads(text)["config"] == {"criterion": "aib"}
    assert tree.loss_csv().splitlines()[0] == "level,a,b,new,loss"


@pytest.mark.parametrize("merges, msg", [
    ([MergeEvent(3, 2, 0, 3, 0.0)], "a < b"),
    ([MergeEvent(3, 0, 1, 4, 0.0)], "bad level"),
    ([MergeEvent(3, 0, 1, 3, 0.0), MergeEvent(2, 0, 2, 4, 0.0)], "not live"),
])
def test_merge_tree_validation(merges, msg):
    with pytest.raises(DatasetError, match=msg):
        MergeTree(3, merges).validate()


def test_non_finite_loss_not_serialised():
    with pytest.raises(DatasetError):
        MergeTree(2, [MergeEvent(2, 0, 1, 2, float("nan"))]).to_json()
