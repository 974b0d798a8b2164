import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentcf import dataset as ds
from latentcf.dataset import CATEGORICAL, NUMERICAL, Column, RawTable, TableSchema

from .conftest import random_encoded


def write(path, text):
    path.write_text(text)
    return path


@pytest.fixture
def schema_file(tmp_path, mixed_schema):
    p = tmp_path / "schema.json"
    ds.save_schema(mixed_schema, p)
    return p


def test_schema_roundtrip_and_width(schema_file, mixed_schema):
    s = ds.load_schema(schema_file)
    assert s == mixed_schema
    assert s.width == 2 + 3 + 2
    assert s.feature_names == ["age", "hours", "job", "city"]
    assert [(b.start, b.stop) for b in s.blocks()] == [(2, 5), (5, 7)]
    assert s.digest() == mixed_schema.digest()


@pytest.mark.parametrize("cols,target,msg", [
    ((Column("a", NUMERICAL), Column("a", NUMERICAL)), "a", "unique"),
    ((Column("a", NUMERICAL), Column("y", CATEGORICAL, ("n", "y"))), "z", "target"),
    ((Column("a", CATEGORICAL, ("only",)), Column("y", CATEGORICAL, ("n", "y"))), "y", ">= 2"),
    ((Column("a", "ordinal"), Column("y", CATEGORICAL, ("n", "y"))), "y", "unknown kind"),
    ((Column("y", CATEGORICAL, ("n", "y")),), "y", "no feature"),
])
def test_schema_validation(cols, target, msg):
    with pytest.raises(ds.SchemaError, match=msg):
        TableSchema(cols, target, "y")


def test_schema_missing_field():
    with pytest.raises(ds.SchemaError, match="target"):
        TableSchema.from_dict({"columns": [{"name": "a", "kind": "numerical"}]})


def test_load_csv_three_rows(tmp_path, mixed_schema):
    p = write(tmp_path / "d.csv", "age,hours,job,city,income\n30,40,a,x,low\n45,20.5,c,y,high\n22,35,b,x,low\n")
    t = ds.load_csv(p, mixed_schema)
    assert len(t) == 3
    assert t.rows[1] == {"age": 45.0, "hours": 20.5, "job": "c", "city": "y", "income": "high"}
    np.testing.assert_array_equal(t.labels(), [0, 1, 0])


def test_load_csv_column_order_free(tmp_path, mixed_schema):
    p = write(tmp_path / "d.csv", "income,job,age,city,hours\nlow,a,30,x,40\n")
    assert ds.load_csv(p, mixed_schema).rows[0]["hours"] == 40.0


@pytest.mark.parametrize("body,msg", [
    ("30,40,blue,x,low\n", r"column 'job': unknown category 'blue'"),
    ("30,4x0,a,x,low\n", r"row 0: column 'hours'"),
    ("30,,a,x,low\n", "missing value"),
    ("30,40,a,x\n", "expected 5 fields"),
    ("30,nan,a,x,low\n", "not finite"),
])
def test_load_csv_errors(tmp_path, mixed_schema, body, msg):
    p = write(tmp_path / "d.csv", "age,hours,job,city,income\n" + body)
    with pytest.raises(ds.DataError, match=msg):
        ds.load_csv(p, mixed_schema)


def test_load_csv_header_mismatch(tmp_path, mixed_schema):
    p = write(tmp_path / "d.csv", "age,hours,job,income\n1,2,a,low\n")
    with pytest.raises(ds.DataError, match="header"):
        ds.load_csv(p, mixed_schema)


def test_load_csv_missing_file(tmp_path, mixed_schema):
    with pytest.raises(FileNotFoundError):
        ds.load_csv(tmp_path / "nope.csv", mixed_schema)


def table_from(schema, rows):
    return RawTable(schema, rows)


def test_fit_statistics_population(mixed_schema):
    rows = [{"age": 0.0, "hours": 3.0, "job": "a", "city": "x", "income": "low"},
            {"age": 10.0, "hours": 3.0, "job": "b", "city": "y", "income": "high"}]
    pre = ds.fit_preprocessor(table_from(mixed_schema, rows))
    assert pre.mins[0] == 0 and pre.maxs[0] == 10 and pre.means[0] == 5 and pre.stds[0] == 5
    # constant column: flagged, std 1, encodes to 0
    assert pre.constant.tolist() == [False, True]
    assert pre.stds[1] == 1.0
    x = pre.encode_row(rows[1])
    assert x[0] == 1.0 and x[1] == 0.0
    np.testing.assert_array_equal(x[2:5], [0, 1, 0])
    assert pre.to_raw_numerical(np.array([0.5, 0.3])).tolist() == [5.0, 3.0]


def test_fit_needs_two_rows(mixed_schema):
    with pytest.raises(ds.DataError, match="2 rows"):
        ds.fit_preprocessor(table_from(mixed_schema, [{"age": 1.0, "hours": 2.0, "job": "a", "city": "x",
                                                        "income": "low"}]))


def test_fit_matches_naive_oracle(tmp_path, mixed_schema):
    rng = np.random.default_rng(5)
    lines = ["age,hours,job,city,income"]
    for _ in range(57):
        lines.append(f"{rng.integers(18, 90)},{rng.uniform(0, 80):.3f},{rng.choice(['a', 'b', 'c'])},"
                     f"{rng.choice(['x', 'y'])},{rng.choice(['low', 'high'])}")
    t = ds.load_csv(write(tmp_path / "d.csv", "\n".join(lines) + "\n"), mixed_schema)
    pre = ds.fit_preprocessor(t)
    for j, name in enumerate(["age", "hours"]):
        vals = [r[name] for r in t.rows]
        total = 0.0
        lo, hi = vals[0], vals[0]
        for v in vals:
            total += v
            lo, hi = min(lo, v), max(hi, v)
        mean = total / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        assert pre.mins[j] == lo and pre.maxs[j] == hi
        assert pre.means[j] == pytest.approx(mean, rel=1e-12)
        assert pre.stds[j] == pytest.approx(var ** 0.5, rel=1e-12)


def test_decode_rejects_non_onehot(mixed_schema):
    pre = ds.fit_preprocessor(table_from(mixed_schema, [
        {"age": 0.0, "hours": 0.0, "job": "a", "city": "x", "income": "low"},
        {"age": 1.0, "hours": 1.0, "job": "b", "city": "y", "income": "low"}]))
    with pytest.raises(ds.DataError, match="job"):
        pre.decode_row(np.array([0.5, 0.5, 0.5, 0.5, 0.0, 1.0, 0.0]))
    with pytest.raises(ds.DataError, match="width"):
        pre.decode_row(np.zeros(3))


def test_decode_clips_out_of_range(mixed_schema):
    pre = ds.fit_preprocessor(table_from(mixed_schema, [
        {"age": 0.0, "hours": 0.0, "job": "a", "city": "x", "income": "low"},
        {"age": 10.0, "hours": 1.0, "job": "b", "city": "y", "income": "low"}]))
    row = pre.decode_row(np.array([1.7, -0.2, 1, 0, 0, 0, 1.0]))
    assert row["age"] == 10.0 and row["hours"] == 0.0
    # out-of-range raw values encode into [0, 1]
    x = pre.encode_row({"age": 25.0, "hours": -3.0, "job": "c", "city": "x"})
    assert x[0] == 1.0 and x[1] == 0.0


def test_encode_unknown_category(mixed_schema):
    pre = ds.fit_preprocessor(table_from(mixed_schema, [
        {"age": 0.0, "hours": 0.0, "job": "a", "city": "x", "income": "low"},
        {"age": 10.0, "hours": 1.0, "job": "b", "city": "y", "income": "low"}]))
    with pytest.raises(ds.DataError, match="unknown category"):
        pre.encode_row({"age": 1.0, "hours": 0.5, "job": "zzz", "city": "x"})


@st.composite
def schema_and_rows(draw):
    n_num = draw(st.integers(0, 4))
    n_cat = draw(st.integers(0 if n_num else 1, 4))
    cols = [Column(f"n{j}", NUMERICAL) for j in range(n_num)]
    for i in range(n_cat):
        size = draw(st.integers(2, 5))
        cols.append(Column(f"c{i}", CATEGORICAL, tuple(f"v{i}_{k}" for k in range(size))))
    cols.append(Column("t", CATEGORICAL, ("0", "1")))
    schema = TableSchema(tuple(cols), "t", "1")
    n = draw(st.integers(2, 30))
    num = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
    rows = []
    for _ in range(n):
        r = {c.name: draw(num) if c.kind == NUMERICAL else draw(st.sampled_from(c.categories)) for c in cols}
        rows.append(r)
    return schema, rows


@settings(max_examples=80, deadline=None)
@given(schema_and_rows())
def test_encode_decode_roundtrip(data):
    schema, rows = data
    t = RawTable(schema, rows)
    pre = ds.fit_preprocessor(t)
    X = pre.encode(t)
    assert X.shape == (len(rows), schema.width)
    for x, r in zip(X, rows):
        assert ds.check_encoded(x, schema) == []
        back = pre.decode_row(x)
        for c in schema.features:
            if c.kind == CATEGORICAL:
                assert back[c.name] == r[c.name]
            else:
                j = [n.name for n in schema.numerical].index(c.name)
                if pre.constant[j]:
                    assert back[c.name] == pre.mins[j]
                else:
                    span = pre.maxs[j] - pre.mins[j]
                    assert abs(back[c.name] - r[c.name]) <= 1e-9 * max(span, 1.0)
        # decode -> encode is the identity on encoded rows
        np.testing.assert_allclose(pre.encode_row({**back}), x, atol=1e-9)


def test_thousand_random_rows_roundtrip(mixed_schema):
    rng = np.random.default_rng(11)
    rows = [{"age": float(rng.integers(0, 100)), "hours": float(rng.uniform(0, 60)),
             "job": str(rng.choice(["a", "b", "c"])), "city": str(rng.choice(["x", "y"])), "income": "low"}
            for _ in range(1000)]
    t = RawTable(mixed_schema, rows)
    pre = ds.fit_preprocessor(t)
    for r in rows:
        back = pre.decode_row(pre.encode_row(r))
        assert back["job"] == r["job"] and back["city"] == r["city"]
        assert abs(back["age"] - r["age"]) <= 1e-9 and abs(back["hours"] - r["hours"]) <= 1e-9


def test_preprocessor_dict_roundtrip(mixed_schema, rng):
    rows = [{"age": float(a), "hours": 2.0 * a, "job": "a", "city": "y", "income": "low"} for a in range(5)]
    pre = ds.fit_preprocessor(RawTable(mixed_schema, rows))
    again = ds.Preprocessor.from_dict(mixed_schema, json.loads(json.dumps(pre.to_dict())))
    X = random_encoded(mixed_schema, 10, rng)
    for x in X:
        assert again.decode_row(x) == pre.decode_row(x)


def test_split_disjoint_and_capped():
    tr, te = ds.train_test_indices(100, 0.2, seed=1, train_cap=50)
    assert len(te) == 20 and len(tr) == 50
    assert not set(tr) & set(te)
    tr2, te2 = ds.train_test_indices(100, 0.2, seed=1, train_cap=50)
    assert np.array_equal(tr, tr2) and np.array_equal(te, te2)
    with pytest.raises(ValueError):
        ds.train_test_indices(10, 1.0, seed=0)


def test_prepare_fits_on_train_only(mixed_schema):
    rows = [{"age": float(i), "hours": 1.0 + i % 3, "job": "abc"[i % 3], "city": "xy"[i % 2],
             "income": ["low", "high"][i % 2]} for i in range(50)]
    t = RawTable(mixed_schema, rows)
    train, test, test_idx = ds.prepare(t, test_fraction=0.2, seed=0)
    train_ages = [rows[i]["age"] for i in range(50) if i not in set(test_idx)]
    assert train.preprocessor.maxs[0] == max(train_ages)
    assert train.preprocessor.means[0] == pytest.approx(np.mean(train_ages))
    assert len(train) + len(test) == 50


def test_select_exact_count_deterministic():
    preds = np.array([0] * 1200 + [1] * 300)
    a = ds.select_test_instances(preds, 1000, seed=4)
    b = ds.select_test_instances(preds, 1000, seed=4)
    assert len(a.indices) == 1000 and a.shortage == 0
    assert np.array_equal(a.indices, b.indices)
    assert np.all(preds[a.indices] == 0)


def test_select_shortage_warns(caplog):
    preds = np.array([0] * 600 + [1] * 50)
    with caplog.at_level(logging.WARNING):
        sel = ds.select_test_instances(preds, 1000, seed=0)
    assert len(sel.indices) == 600 and sel.shortage == 400
    assert "600" in caplog.text


def test_check_encoded_reports(mixed_schema):
    x = np.array([0.2, 1.3, 0, 1, 0, 0.5, 0.5])
    probs = ds.check_encoded(x, mixed_schema)
    assert any("numerical" in p for p in probs) and any("city" in p for p in probs)


def test_write_csv_roundtrip(tmp_path, mixed_schema):
    rows = [{"age": 0.1 + i, "hours": 1.0 / 3.0, "job": "b", "city": "x", "income": "high"} for i in range(4)]
    ds.write_csv(RawTable(mixed_schema, rows), tmp_path / "o.csv")
    assert ds.load_csv(tmp_path / "o.csv", mixed_schema).rows == rows


def test_adult_style_schema_roundtrip(tmp_path):
    cats = {"workclass": 4, "education": 6, "marital": 3, "occupation": 5, "relationship": 3,
            "race": 3, "sex": 2, "country": 4}
    cols = [Column(n, NUMERICAL) for n in ("age", "fnlwgt", "capital", "hours")]
    cols += [Column(n, CATEGORICAL, tuple(f"{n}{k}" for k in range(c))) for n, c in cats.items()]
    cols.append(Column("income", CATEGORICAL, ("<=50K", ">50K")))
    schema = TableSchema(tuple(cols), "income", ">50K")
    assert (len(schema.numerical), len(schema.categorical)) == (4, 8)
    rng = np.random.default_rng(2)
    lines = [",".join(c.name for c in cols)]
    for _ in range(40):
        vals = [str(int(rng.integers(0, 1000))) for _ in range(4)]
        vals += [str(rng.choice(c.categories)) for c in cols[4:]]
        lines.append(",".join(vals))
    t = ds.load_csv(write(tmp_path / "adult.csv", "\n".join(lines) + "\n"), schema)
    pre = ds.fit_preprocessor(t)
    for r in t.rows:
        back = pre.decode_row(pre.encode_row(r))
        assert all(back[c.name] == r[c.name] for c in schema.categorical)
        assert all(abs(back[c.name] - r[c.name]) < 1e-9 for c in schema.numerical)
