"""Tabular ingestion and the two-party vertical split.

A :class:`FederatedSplit` divides the encoded feature columns into two
disjoint sets (source and target) and the samples into source-only,
target-only and co-occurring ids.  Target labels exist only for
evaluation and are guarded: reading them outside
:meth:`FederatedSplit.evaluation` raises.
"""

from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


class LabelFirewallError(RuntimeError):
    """Target labels were requested outside the evaluation path."""


@dataclass(frozen=True)
class Schema:
    label: str
    positive: tuple[str, ...] = ("1",)
    categorical: tuple[str, ...] = ()
    drop: tuple[str, ...] = ()
    missing: tuple[str, ...] = ()


# Credit: the full UCI "default of credit card clients" table, and the
# 6,000-row, 4-feature sample of it that ships with skorecard.
SCHEMAS: dict[str, Schema] = {
    "credit": Schema(
        label="default payment next month",
        categorical=("SEX", "EDUCATION", "MARRIAGE"),
        drop=("ID",),
    ),
    "credit-sample": Schema(label="default", categorical=("EDUCATION", "MARRIAGE")),
    "census": Schema(
        label="income",
        positive=(">50K", ">50K."),
        categorical=("workclass", "education", "marital-status", "occupation", "relationship", "race",
                     "sex", "native-country"),
        drop=("fnlwgt",),
        missing=("?",),
    ),
}


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    columns: list[str]
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError("feature and label row counts differ")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise DataError("labels must be in {-1, +1}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], list(self.columns), self.mean, self.std)


def load_csv(path, schema: Schema | str, on_error: str = "fail") -> Dataset:
    """Read a header-row CSV, one-hot the categoricals, map labels to +-1.

    ``on_error="skip"`` drops unparseable rows (logged with their line
    number) instead of raising.
    """
    if isinstance(schema, str):
        schema = SCHEMAS[schema]
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(path, dtype=str, skipinitialspace=True, keep_default_na=False)
    df.columns = [c.strip() for c in df.columns]
    for col in (schema.label,) + schema.categorical + schema.drop:
        if col not in df.columns:
            raise DataError(f"unknown column {col!r} in {path.name}")
    df = df.drop(columns=list(schema.drop))

    labels = df.pop(schema.label).str.strip()
    y = np.where(labels.isin(schema.positive), 1.0, -1.0)

    numeric_cols = [c for c in df.columns if c not in schema.categorical]
    numeric = df[numeric_cols].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1) & ~df[numeric_cols].isin(schema.missing).any(axis=1)
    missing_num = numeric.isna().any(axis=1)
    if missing_num.any():
        rows = np.flatnonzero(missing_num.to_numpy())
        if on_error != "skip" and bad.any():
            line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
            raise DataError(f"{path.name}: unparseable numeric value on line {line}")
        for r in rows[:10]:
            log.warning("%s: skipping line %d (missing/unparseable numeric)", path.name, r + 2)
        keep = ~missing_num.to_numpy()
        df, numeric, y = df[keep], numeric[keep], y[keep]

    parts = [numeric.to_numpy(dtype=np.float64)]
    columns = list(numeric_cols)
    for col in schema.categorical:
        levels = sorted(df[col].str.strip().unique())
        vals = df[col].str.strip().to_numpy()
        parts.append(np.stack([(vals == lv).astype(np.float64) for lv in levels], axis=1))
        columns += [f"{col}={lv}" for lv in levels]
    X = np.hstack(parts) if parts else np.zeros((len(y), 0))
    return Dataset(X, y, columns)


def normalize(dataset: Dataset, rows=None, stats: tuple[np.ndarray, np.ndarray] | None = None) -> Dataset:
    """Z-score columns with stats from ``rows`` (or the given ``stats``).

    Zero-variance columns map to 0.
    """
    if stats is None:
        ref = dataset.X if rows is None else dataset.X[np.asarray(rows, dtype=np.int64)]
        if ref.shape[0] == 0:
            raise DataError("cannot normalise with an empty reference set")
        mean = ref.mean(axis=0)
        std = ref.std(axis=0)
    else:
        mean, std = stats
    safe = np.where(std > 0, std, 1.0)
    X = np.where(std > 0, (dataset.X - mean) / safe, 0.0)
    return Dataset(X, dataset.y, list(dataset.columns), mean, std)


def make_synthetic(n: int = 200, n_features: int = 8, shift: float = 1.0, seed: int = 0) -> Dataset:
    """Two-Gaussian classification data whose second half of columns is shifted.

    The class means differ along every column; the later columns (the
    default target side of a half/half split) carry an extra offset so
    source and target features are distributed differently.
    """
    rng = np.random.default_rng(seed)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    centers = rng.normal(0.0, 0.6, size=n_features)
    X = rng.standard_normal((n, n_features)) + y[:, None] * centers[None, :]
    X[:, n_features // 2:] = 1.5 * X[:, n_features // 2:] + shift
    return Dataset(X, y, [f"x{i}" for i in range(n_features)])


def desk_subset(dataset: Dataset, max_rows: int | None, seed: int) -> Dataset:
    if max_rows is None or dataset.n <= max_rows:
        return dataset
    rows = np.sort(np.random.default_rng(seed).choice(dataset.n, size=max_rows, replace=False))
    return dataset.subset(rows)


# ---------------------------------------------------------------------------
# federated split
# ---------------------------------------------------------------------------


@dataclass
class FederatedSplit:
    """Column-disjoint source/target views over shared sample ids."""

    X: np.ndarray = field(repr=False)
    _y: np.ndarray = field(repr=False)
    columns: list[str]
    source_cols: np.ndarray
    target_cols: np.ndarray
    source_ids: np.ndarray
    target_ids: np.ndarray
    seed: int = 0
    source_fraction: float = 0.5
    overlap_fraction: float = 0.5
    _eval_depth: int = field(default=0, repr=False)
    label_reads: int = field(default=0, repr=False)
    target_feature_reads: int = field(default=0, repr=False)

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        if np.intersect1d(self.source_cols, self.target_cols).size:
            raise DataError("source and target column sets intersect")
        cover = np.union1d(self.source_cols, self.target_cols)
        if cover.size != self.X.shape[1]:
            raise DataError("column sets do not cover the feature space")
        if self.source_cols.size == 0 or self.target_cols.size == 0:
            raise DataError("each side needs at least one feature column")

    @property
    def cooccurrence_ids(self) -> np.ndarray:
        return np.intersect1d(self.source_ids, self.target_ids)

    @property
    def n_st(self) -> int:
        return int(self.cooccurrence_ids.size)

    # source side: features and labels are the source party's own data
    def source_features(self, ids) -> np.ndarray:
        return self.X[np.ix_(np.asarray(ids), self.source_cols)]

    def source_labels(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        if not np.all(np.isin(ids, self.source_ids)):
            raise LabelFirewallError("source labels requested for ids outside the source view")
        return self._y[ids]

    def target_features(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        # only reads that touch target training rows count; held-out rows are evaluation
        if np.isin(ids, self.target_ids).any():
            self.target_feature_reads += 1
        return self.X[np.ix_(ids, self.target_cols)]

    @contextlib.contextmanager
    def evaluation(self):
        self._eval_depth += 1
        try:
            yield self
        finally:
            self._eval_depth -= 1

    def target_labels(self, ids) -> np.ndarray:
        if self._eval_depth <= 0:
            raise LabelFirewallError("target labels are evaluation-only")
        self.label_reads += 1
        return self._y[np.asarray(ids)]

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "source_fraction": self.source_fraction,
            "overlap_fraction": self.overlap_fraction,
            "source_columns": [self.columns[i] for i in self.source_cols],
            "target_columns": [self.columns[i] for i in self.target_cols],
            "n_source": int(self.source_ids.size),
            "n_target": int(self.target_ids.size),
            "n_cooccurrence": self.n_st,
        }


def vertical_split(dataset: Dataset, source_fraction: float = 0.5, overlap_fraction: float = 0.5,
                   seed: int = 0) -> FederatedSplit:
    """Partition columns into disjoint source/target sets and pick overlap samples.

    ``overlap_fraction`` of the samples are in both views; the rest are
    dealt alternately to source-only and target-only.
    """
    if not 0 < source_fraction < 1:
        raise DataError("source_fraction must lie in (0, 1)")
    if not 0 < overlap_fraction <= 1:
        raise DataError("overlap_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    n_cols = dataset.X.shape[1]
    n_src = int(round(source_fraction * n_cols))
    if n_src == 0 or n_src == n_cols:
        raise DataError(f"source_fraction={source_fraction} leaves a side with no columns ({n_cols} total)")
    perm = rng.permutation(n_cols)
    source_cols = np.sort(perm[:n_src])
    target_cols = np.sort(perm[n_src:])

    order = rng.permutation(dataset.n)
    n_overlap = int(round(overlap_fraction * dataset.n))
    overlap = order[:n_overlap]
    rest = order[n_overlap:]
    source_ids = np.sort(np.concatenate([overlap, rest[0::2]]))
    target_ids = np.sort(np.concatenate([overlap, rest[1::2]]))
    return FederatedSplit(dataset.X, dataset.y, list(dataset.columns), source_cols, target_cols,
                          source_ids, target_ids, seed, source_fraction, overlap_fraction)


@dataclass
class TestViews:
    split: FederatedSplit = field(repr=False)
    ids: np.ndarray

    def source_features(self) -> np.ndarray:
        return self.split.source_features(self.ids)

    def target_features(self) -> np.ndarray:
        return self.split.target_features(self.ids)

    def labels(self) -> np.ndarray:
        return self.split.target_labels(self.ids)


def train_test_split(split: FederatedSplit, test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[FederatedSplit, TestViews]:
    """Stratified sample-level split; the training split keeps only train ids."""
    if not 0 < test_fraction < 1:
        raise DataError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed + 7919)
    y = split._y
    test = []
    for cls in (-1.0, 1.0):
        members = np.flatnonzero(y == cls)
        k = int(round(test_fraction * members.size))
        if members.size == 0 or k == 0 or k == members.size:
            raise DataError(f"class {cls:+.0f} cannot be stratified ({members.size} rows)")
        test.append(rng.choice(members, size=k, replace=False))
    test_ids = np.sort(np.concatenate(test))
    is_test = np.zeros(y.shape[0], dtype=bool)
    is_test[test_ids] = True
    train = FederatedSplit(split.X, split._y, split.columns, split.source_cols, split.target_cols,
                           split.source_ids[~is_test[split.source_ids]],
                           split.target_ids[~is_test[split.target_ids]],
                           split.seed, split.source_fraction, split.overlap_fraction)
    return train, TestViews(train, test_ids)


def normalize_split(train: FederatedSplit) -> FederatedSplit:
    """Z-score source columns on source train rows and target columns on target train rows."""
    X = train.X.copy()
    for cols, ids in ((train.source_cols, train.source_ids), (train.target_cols, train.target_ids)):
        view = Dataset(X[:, cols], np.ones(X.shape[0]), [])
        X[:, cols] = normalize(view, rows=ids).X
    return FederatedSplit(X, train._y, train.columns, train.source_cols, train.target_cols, train.source_ids,
                          train.target_ids, train.seed, train.source_fraction, train.overlap_fraction)


def write_split(split: FederatedSplit, test: TestViews, out_dir) -> None:
    """Cache the two views as CSV plus a JSON sidecar manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src_cols = [split.columns[i] for i in split.source_cols]
    tgt_cols = [split.columns[i] for i in split.target_cols]
    src = pd.DataFrame(split.X[np.ix_(split.source_ids, split.source_cols)], columns=src_cols)
    src.insert(0, "id", split.source_ids)
    src["label"] = split._y[split.source_ids].astype(int)
    src.to_csv(out / "source_train.csv", index=False)
    tgt = pd.DataFrame(split.X[np.ix_(split.target_ids, split.target_cols)], columns=tgt_cols)
    tgt.insert(0, "id", split.target_ids)
    tgt.to_csv(out / "target_train.csv", index=False)
    manifest = split.manifest() | {"test_ids": test.ids.tolist()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
