from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from securemmd import data as D

DATA = Path(__file__).resolve().parents[1] / "data"


def _toy(tmp_path, text, name="toy.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_toy_onehot(tmp_path):
    p = _toy(tmp_path, "a,b,color,label\n1,2,red,1\n3,4,blue,0\n5,6,red,1\n")
    ds = D.load_csv(p, D.Schema(label="label", categorical=("color",)))
    assert ds.X.shape == (3, 2 + 2)
    assert ds.columns == ["a", "b", "color=blue", "color=red"]
    assert np.array_equal(ds.y, [1, -1, 1])
    assert np.array_equal(ds.X[:, 2:], [[0, 1], [1, 0], [0, 1]])


def test_all_positive_labels(tmp_path):
    p = _toy(tmp_path, "a,label\n1,1\n2,1\n")
    assert np.all(D.load_csv(p, D.Schema(label="label")).y == 1)


def test_census_style_labels_and_missing(tmp_path):
    p = _toy(tmp_path, "age,workclass,income\n30,Private,>50K\n40,?,<=50K.\n50,Private,>50K.\n")
    ds = D.load_csv(p, D.Schema(label="income", positive=(">50K", ">50K."), categorical=("workclass",),
                                missing=("?",)))
    assert np.array_equal(ds.y, [1, -1, 1])
    assert "workclass=?" in ds.columns


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        D.load_csv(tmp_path / "nope.csv", D.Schema(label="y"))
    p = _toy(tmp_path, "a,label\n1,1\n")
    with pytest.raises(D.DataError, match="unknown column"):
        D.load_csv(p, D.Schema(label="y"))
    p = _toy(tmp_path, "a,label\n1,1\nx,0\n2,0\n", "bad.csv")
    with pytest.raises(D.DataError, match="line 3"):
        D.load_csv(p, D.Schema(label="label"))
    ds = D.load_csv(p, D.Schema(label="label"), on_error="skip")
    assert ds.n == 2


def test_normalize():
    r = np.random.default_rng(0)
    X = r.normal(size=(50, 3))
    X[:, 0] = (X[:, 0] - X[:, 0].mean()) / X[:, 0].std()
    X[:, 2] = 7.0
    ds = D.normalize(D.Dataset(X, np.ones(50), ["a", "b", "c"]))
    assert np.allclose(ds.X[:, 0], X[:, 0], atol=1e-12)
    assert np.all(ds.X[:, 2] == 0)
    assert np.all(np.abs(ds.X.mean(axis=0)) < 1e-9)
    with pytest.raises(D.DataError):
        D.normalize(ds, rows=[])


def _dataset(n=1000, cols=22, seed=0):
    r = np.random.default_rng(seed)
    y = np.where(r.random(n) < 0.3, 1.0, -1.0)
    return D.Dataset(r.normal(size=(n, cols)), y, [f"c{i}" for i in range(cols)])


def test_vertical_split_examples():
    ds = _dataset()
    sp = D.vertical_split(ds, 0.5, 0.5, seed=3)
    assert sp.source_cols.size == sp.target_cols.size == 11
    assert np.intersect1d(sp.source_cols, sp.target_cols).size == 0
    assert np.union1d(sp.source_cols, sp.target_cols).size == 22
    assert sp.n_st == 500
    full = D.vertical_split(ds, 0.5, 1.0, seed=3)
    assert full.n_st == ds.n
    again = D.vertical_split(ds, 0.5, 0.5, seed=3)
    assert np.array_equal(again.source_cols, sp.source_cols) and np.array_equal(again.source_ids, sp.source_ids)
    other = D.vertical_split(ds, 0.5, 0.5, seed=4)
    assert not np.array_equal(other.source_ids, sp.source_ids)


def test_vertical_split_errors():
    ds = _dataset(cols=3)
    with pytest.raises(D.DataError):
        D.vertical_split(ds, 0.1)
    with pytest.raises(D.DataError):
        D.vertical_split(ds, 1.0)
    with pytest.raises(D.DataError):
        D.vertical_split(ds, 0.5, 0.0)


def test_train_test_split():
    ds = _dataset()
    sp = D.vertical_split(ds, 0.5, 1.0, seed=0)
    train, test = D.train_test_split(sp, 0.2, seed=0)
    train_ids = np.union1d(train.source_ids, train.target_ids)
    assert abs(train_ids.size - 800) <= 1 and abs(test.ids.size - 200) <= 1
    assert np.intersect1d(train_ids, test.ids).size == 0
    assert np.all(np.isin(train.cooccurrence_ids, train_ids))
    ratio = lambda ids: np.mean(ds.y[ids] == 1)
    assert abs(ratio(train_ids) - ratio(test.ids)) < 0.01


def test_stratification_error():
    ds = D.Dataset(np.zeros((10, 2)), -np.ones(10), ["a", "b"])
    with pytest.raises(D.DataError):
        D.train_test_split(D.vertical_split(ds, 0.5, 1.0), 0.2)


def test_label_firewall():
    sp = D.vertical_split(_dataset(), 0.5, 0.5)
    ids = sp.target_ids[:5]
    with pytest.raises(D.LabelFirewallError):
        sp.target_labels(ids)
    with sp.evaluation():
        assert sp.target_labels(ids).shape == (5,)
    assert sp.label_reads == 1
    with pytest.raises(D.LabelFirewallError):
        sp.target_labels(ids)
    only_target = np.setdiff1d(sp.target_ids, sp.source_ids)[:3]
    with pytest.raises(D.LabelFirewallError):
        sp.source_labels(only_target)


def test_target_feature_counter():
    sp = D.vertical_split(_dataset(), 0.5, 0.5)
    train, test = D.train_test_split(sp, 0.2)
    test.target_features()
    assert train.target_feature_reads == 0
    train.target_features(train.target_ids[:3])
    assert train.target_feature_reads == 1


def test_normalize_split_uses_train_rows():
    sp = D.vertical_split(_dataset(), 0.5, 0.5)
    train, _ = D.train_test_split(sp, 0.2)
    ns = D.normalize_split(train)
    src = ns.source_features(ns.source_ids)
    assert np.all(np.abs(src.mean(axis=0)) < 1e-9)
    tgt = ns.X[np.ix_(ns.target_ids, ns.target_cols)]
    assert np.all(np.abs(tgt.mean(axis=0)) < 1e-9)


def test_synthetic_and_desk():
    ds = D.make_synthetic(200, 8, seed=1)
    assert ds.X.shape == (200, 8) and set(np.unique(ds.y)) == {-1.0, 1.0}
    assert ds.X[:, 4:].mean() > ds.X[:, :4].mean() + 0.5
    sub = D.desk_subset(ds, 50, seed=0)
    assert sub.n == 50 and D.desk_subset(ds, None, 0) is ds


def test_write_split(tmp_path):
    import json

    sp = D.vertical_split(_dataset(100, 6), 0.5, 0.5)
    train, test = D.train_test_split(sp, 0.2)
    D.write_split(train, test, tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["n_cooccurrence"] == train.n_st
    assert sorted(p.name for p in tmp_path.glob("*.csv"))


def test_credit_sample_file():
    p = DATA / "credit_sample.csv"
    if not p.exists():
        pytest.skip("credit sample not fetched (tools/fetch_data.py)")
    ds = D.load_csv(p, "credit-sample")
    assert ds.n == 6000
    assert ds.X.shape[1] == 13


def test_full_credit_file_shape():
    p = DATA / "credit.csv"
    if not p.exists():
        pytest.skip("full credit table not present; pass --credit-full to tools/fetch_data.py")
    raw = pd.read_csv(p)
    feats = [c for c in raw.columns if c not in ("ID", "default payment next month")]
    assert raw.shape[0] == 30000 and len(feats) == 23
    assert D.load_csv(p, "credit").n == 30000


def test_census_file():
    p = DATA / "census.csv"
    if not p.exists():
        pytest.skip("census not fetched")
    ds = D.load_csv(p, "census")
    assert ds.n == 48842
    assert ds.X.shape[1] == 107
