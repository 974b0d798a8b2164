"""Schema, CSV ingestion, min-max / one-hot encoding and splitting.

Schema files are JSON::

    {
      "columns": [
        {"name": "age", "kind": "numerical"},
        {"name": "job", "kind": "categorical", "categories": ["a", "b", "c"]},
        {"name": "income", "kind": "categorical", "categories": ["<50K", ">=50K"]}
      ],
      "target": {"column": "income", "desired": ">=50K"}
    }

The target column must be listed in ``columns`` (categorical with any
number of categories, or numerical holding 0/1).  It is excluded from the
feature vector; rows whose target equals ``desired`` get label 1.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

NUMERICAL = "numerical"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple[str, ...] = ()


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[Column, ...]
    target_column: str
    desired_label: str

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        if self.target_column not in names:
            raise SchemaError(f"target column {self.target_column!r} not among columns")
        for c in self.columns:
            if c.kind not in (NUMERICAL, CATEGORICAL):
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
            if c.kind == CATEGORICAL:
                if len(c.categories) < 2:
                    raise SchemaError(f"column {c.name!r}: categorical domain needs >= 2 values")
                if len(set(c.categories)) != len(c.categories):
                    raise SchemaError(f"column {c.name!r}: duplicate categories")
        if not self.features:
            raise SchemaError("schema has no feature columns")

    @property
    def features(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.name != self.target_column)

    @property
    def numerical(self) -> tuple[Column, ...]:
        return tuple(c for c in self.features if c.kind == NUMERICAL)

    @property
    def categorical(self) -> tuple[Column, ...]:
        return tuple(c for c in self.features if c.kind == CATEGORICAL)

    @property
    def category_sizes(self) -> tuple[int, ...]:
        return tuple(len(c.categories) for c in self.categorical)

    @property
    def n_features(self) -> int:
        return len(self.numerical) + len(self.categorical)

    @property
    def width(self) -> int:
        """k = |N| + sum of categorical domain sizes."""
        return len(self.numerical) + sum(self.category_sizes)

    @property
    def feature_names(self) -> list[str]:
        """Feature names in encoded order: numericals first, then categoricals."""
        return [c.name for c in self.numerical] + [c.name for c in self.categorical]

    def blocks(self) -> list[slice]:
        """Slices of the encoded vector covering each categorical block."""
        out, start = [], len(self.numerical)
        for size in self.category_sizes:
            out.append(slice(start, start + size))
            start += size
        return out

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            d = {"name": c.name, "kind": c.kind}
            if c.kind == CATEGORICAL:
                d["categories"] = list(c.categories)
            cols.append(d)
        return {"columns": cols, "target": {"column": self.target_column, "desired": self.desired_label}}

    @classmethod
    def from_dict(cls, d: dict) -> "TableSchema":
        try:
            cols = tuple(
                Column(c["name"], c["kind"], tuple(str(v) for v in c.get("categories", ())))
                for c in d["columns"]
            )
            target = d["target"]
            return cls(cols, target["column"], str(target["desired"]))
        except KeyError as exc:
            raise SchemaError(f"schema missing field {exc}") from None

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_schema(path) -> TableSchema:
    with open(path, encoding="utf-8") as fh:
        return TableSchema.from_dict(json.load(fh))


def save_schema(schema: TableSchema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# raw tables

@dataclass
class RawTable:
    """Parsed rows: numerical columns as floats, categoricals as strings."""

    schema: TableSchema
    rows: list[dict]

    def __len__(self):
        return len(self.rows)

    def labels(self) -> np.ndarray:
        tgt = self.schema.target_column
        desired = self.schema.desired_label
        return np.array([1 if _label_str(r[tgt]) == desired else 0 for r in self.rows], dtype=np.int64)


def _label_str(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def load_csv(path, schema: TableSchema) -> RawTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        expected = [c.name for c in schema.columns]
        if sorted(header) != sorted(expected):
            raise DataError(f"{path}: header {header} does not match schema columns {expected}")
        cols = {c.name: c for c in schema.columns}
        rows = []
        for i, rec in enumerate(reader):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"row {i}: expected {len(header)} fields, got {len(rec)}")
            row = {}
            for name, value in zip(header, rec):
                row[name] = _parse_cell(cols[name], value, i)
            rows.append(row)
    return RawTable(schema, rows)


def _parse_cell(col: Column, value: str, row_index: int):
    value = value.strip()
    if value == "":
        raise DataError(f"row {row_index}: missing value in column {col.name!r}")
    if col.kind == NUMERICAL:
        try:
            v = float(value)
        except ValueError:
            raise DataError(f"row {row_index}: column {col.name!r} value {value!r} is not numeric") from None
        if not math.isfinite(v):
            raise DataError(f"row {row_index}: column {col.name!r} value {value!r} is not finite")
        return v
    if value not in col.categories:
        raise DataError(f"column {col.name!r}: unknown category {value!r}")
    return value


def write_csv(table: RawTable, path) -> None:
    names = [c.name for c in table.schema.columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in table.rows:
            w.writerow([_fmt(r[n]) for n in names])


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# preprocessing

@dataclass
class Preprocessor:
    schema: TableSchema
    mins: np.ndarray
    maxs: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    constant: np.ndarray  # bool per numerical column
    category_index: list[dict[str, int]] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.schema.width

    def encode_row(self, row: dict) -> np.ndarray:
        out = np.zeros(self.width)
        for j, col in enumerate(self.schema.numerical):
            v = float(row[col.name])
            if not math.isfinite(v):
                raise DataError(f"column {col.name!r}: non-finite value")
            out[j] = self._scale(j, v)
        for idx, (col, blk) in enumerate(zip(self.schema.categorical, self.schema.blocks())):
            try:
                pos = self.category_index[idx][row[col.name]]
            except KeyError:
                raise DataError(f"column {col.name!r}: unknown category {row[col.name]!r}") from None
            out[blk.start + pos] = 1.0
        return out

    def _scale(self, j: int, v: float) -> float:
        if self.constant[j]:
            return 0.0
        # values outside the training range (test rows) are clipped into [0, 1]
        return min(1.0, max(0.0, (v - self.mins[j]) / (self.maxs[j] - self.mins[j])))

    def decode_row(self, x: np.ndarray) -> dict:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.width,):
            raise DataError(f"encoded row must have width {self.width}, got shape {x.shape}")
        row = {}
        num = self.to_raw_numerical(x[: len(self.schema.numerical)])
        for j, col in enumerate(self.schema.numerical):
            row[col.name] = float(num[j])
        for col, blk in zip(self.schema.categorical, self.schema.blocks()):
            b = x[blk]
            if not (np.all((b == 0.0) | (b == 1.0)) and b.sum() == 1.0):
                raise DataError(f"column {col.name!r}: block {b.tolist()} is not exactly one-hot")
            row[col.name] = col.categories[int(np.argmax(b))]
        return row

    def to_raw_numerical(self, xnum: np.ndarray) -> np.ndarray:
        """Map min-max encoded numericals (last axis) back to raw values, clipping to [min, max]."""
        xnum = np.clip(np.asarray(xnum, dtype=np.float64), 0.0, 1.0)
        raw = self.mins + xnum * (self.maxs - self.mins)
        return np.where(self.constant, self.mins, raw)

    def standardize(self, raw_num: np.ndarray) -> np.ndarray:
        return (raw_num - self.means) / self.stds

    def encode(self, table: RawTable) -> np.ndarray:
        return np.array([self.encode_row(r) for r in table.rows]).reshape(len(table), self.width)

    def to_dict(self) -> dict:
        return {
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, schema: TableSchema, d: dict) -> "Preprocessor":
        return cls(
            schema,
            np.array(d["mins"], dtype=np.float64),
            np.array(d["maxs"], dtype=np.float64),
            np.array(d["means"], dtype=np.float64),
            np.array(d["stds"], dtype=np.float64),
            np.array(d["constant"], dtype=bool),
            _category_maps(schema),
        )


def _category_maps(schema: TableSchema) -> list[dict[str, int]]:
    return [{v: i for i, v in enumerate(c.categories)} for c in schema.categorical]


def fit_preprocessor(table: RawTable, schema: TableSchema | None = None) -> Preprocessor:
    """Fit scaling statistics on ``table`` (pass the training split only)."""
    schema = schema or table.schema
    if len(table) < 2:
        raise DataError("need at least 2 rows to fit the preprocessor")
    nums = schema.numerical
    data = np.array([[r[c.name] for c in nums] for r in table.rows], dtype=np.float64).reshape(len(table), len(nums))
    mins = data.min(axis=0)
    maxs = data.max(axis=0)
    means = data.mean(axis=0)
    stds = data.std(axis=0)
    constant = maxs == mins
    if constant.any():
        log.warning("constant numerical columns: %s", [c.name for c, k in zip(nums, constant) if k])
    stds = np.where(stds > 0, stds, 1.0)
    return Preprocessor(schema, mins, maxs, means, stds, constant, _category_maps(schema))


# ---------------------------------------------------------------------------
# encoded dataset and splitting

@dataclass
class EncodedDataset:
    X: np.ndarray
    y: np.ndarray
    preprocessor: Preprocessor

    @property
    def schema(self) -> TableSchema:
        return self.preprocessor.schema

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return EncodedDataset(self.X[idx], self.y[idx], self.preprocessor)


def train_test_indices(n_rows: int, test_fraction: float, seed: int, train_cap: int | None = None):
    """Disjoint shuffled train/test index arrays; the train side is capped at ``train_cap``."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_rows)
    n_test = max(1, int(round(n_rows * test_fraction)))
    test, train = perm[:n_test], perm[n_test:]
    if train_cap is not None:
        train = train[:train_cap]
    return np.sort(train), np.sort(test)


def prepare(table: RawTable, test_fraction: float = 0.2, seed: int = 0, train_cap: int | None = 30000):
    """Split a raw table, fit the preprocessor on the train part and encode both parts."""
    train_idx, test_idx = train_test_indices(len(table), test_fraction, seed, train_cap)
    train_raw = RawTable(table.schema, [table.rows[i] for i in train_idx])
    pre = fit_preprocessor(train_raw)
    X = pre.encode(table)
    y = table.labels()
    full = EncodedDataset(X, y, pre)
    return full.subset(train_idx), full.subset(test_idx), test_idx


@dataclass
class Selection:
    indices: np.ndarray
    shortage: int


def select_test_instances(predictions: np.ndarray, n: int, seed: int) -> Selection:
    """Pick up to ``n`` rows predicted as class 0, deterministically by ``seed``.

    ``predictions`` holds the black-box decisions for the test pool.  Returned
    indices are sorted so downstream files list instances in pool order.
    """
    eligible = np.flatnonzero(np.asarray(predictions) == 0)
    if len(eligible) < n:
        log.warning("only %d eligible test instances, %d requested", len(eligible), n)
        return Selection(eligible.copy(), n - len(eligible))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(eligible, size=n, replace=False)
    return Selection(np.sort(chosen), 0)


def check_encoded(x: np.ndarray, schema: TableSchema, atol: float = 0.0) -> list[str]:
    """Return a list of constraint violations for one encoded row (empty if valid)."""
    problems = []
    n_num = len(schema.numerical)
    num = x[:n_num]
    if np.any(num < -atol) or np.any(num > 1 + atol) or not np.all(np.isfinite(num)):
        problems.append("numerical entry outside [0,1]")
    for col, blk in zip(schema.categorical, schema.blocks()):
        b = x[blk]
        if not (np.all((b == 0.0) | (b == 1.0)) and b.sum() == 1.0):
            problems.append(f"{col.name}: not exactly one-hot")
    return problems
