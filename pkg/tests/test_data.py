import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alpha_ewm.data import (
    CapabilityError,
    ObservationTable,
    ParseError,
    SchemaError,
    ValidationError,
    load_table,
    partition_folds,
    write_table,
)

SCHEMA = {"covariates": ["x1"], "outcome": "y", "treatment": "a"}


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_file(tmp_path):
    t = load_table(_write(tmp_path, "x1,y,a\n0.5,1.0,1\n0.2,3.5,0\n"), SCHEMA)
    assert (t.n, t.p) == (2, 1)
    assert t.a.dtype == np.int8
    assert list(t.y) == [1.0, 3.5]


def test_jtpa_shaped_file(tmp_path):
    rng = np.random.default_rng(0)
    n = 9223
    rows = ["edu,prevearn,earnings,treatment"]
    for i in range(n):
        rows.append(f"{rng.integers(7, 19)},{rng.exponential(2000):.2f},{rng.exponential(15000):.2f},{int(rng.random() < 2 / 3)}")
    p = _write(tmp_path, "\n".join(rows) + "\n")
    t = load_table(p, {"covariates": "edu,prevearn", "outcome": "earnings", "treatment": "treatment"}, known_propensity=2 / 3)
    assert (t.n, t.p) == (9223, 2)
    assert t.covariate_names == ("edu", "prevearn")


def test_missing_treatment_column(tmp_path):
    with pytest.raises(SchemaError, match="'a'"):
        load_table(_write(tmp_path, "x1,y\n1,2\n"), SCHEMA)


def test_non_numeric_cell_reports_row(tmp_path):
    with pytest.raises(ParseError, match="row 1"):
        load_table(_write(tmp_path, "x1,y,a\n1,2,0\n1,abc,1\n"), SCHEMA)


def test_empty_cell_rejected(tmp_path):
    with pytest.raises(ParseError):
        load_table(_write(tmp_path, "x1,y,a\n1,,0\n"), SCHEMA)


def test_treatment_outside_binary(tmp_path):
    with pytest.raises(ValidationError, match="outside"):
        load_table(_write(tmp_path, "x1,y,a\n1,2,0\n1,2,2\n"), SCHEMA)


def test_column_order_is_schema_driven(tmp_path):
    t = load_table(_write(tmp_path, "a,y,x1\n1,2.5,0.1\n"), SCHEMA)
    assert t.x[0, 0] == 0.1 and t.y[0] == 2.5 and t.a[0] == 1


def test_counterfactual_consistency_checked_on_load(tmp_path):
    schema = {**SCHEMA, "y0": "y0", "y1": "y1"}
    ok = load_table(_write(tmp_path, "x1,y,a,y0,y1\n0,2,1,1,2\n0,1,0,1,2\n"), schema)
    assert ok.has_counterfactuals
    with pytest.raises(ValidationError, match="row 0"):
        load_table(_write(tmp_path, "x1,y,a,y0,y1\n0,5,1,1,2\n", "bad.csv"), schema)


def test_table_invariants():
    with pytest.raises(ValidationError):
        ObservationTable(x=[[0.0]], y=[np.nan], a=[0])
    with pytest.raises(ValidationError):
        ObservationTable(x=np.zeros((0, 1)), y=[], a=[])
    t = ObservationTable(x=[[1.0], [2.0]], y=[1.0, 2.0], a=[0, 1])
    with pytest.raises(ValueError):
        t.x[0, 0] = 3.0
    with pytest.raises(CapabilityError):
        t.require_counterfactuals()


@settings(max_examples=60)
@given(
    st.integers(1, 30).flatmap(
        lambda n: st.tuples(
            st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2 * n, max_size=2 * n),
            st.lists(st.floats(-1e9, 1e9, allow_nan=False), min_size=2 * n, max_size=2 * n),
            st.lists(st.integers(0, 1), min_size=n, max_size=n),
        )
    )
)
def test_csv_round_trip_is_bitwise(tmp_path_factory, parts):
    xs, ys, a = parts
    n = len(a)
    a = np.array(a)
    y0, y1 = np.array(ys[:n]), np.array(ys[n:])
    t = ObservationTable(x=np.array(xs).reshape(n, 2), y=np.where(a == 1, y1, y0), a=a, y0=y0, y1=y1)
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    schema = write_table(t, path)
    back = load_table(path, schema)
    for name in ("x", "y", "a", "y0", "y1"):
        assert np.array_equal(getattr(t, name), getattr(back, name))
        assert getattr(t, name).tobytes() == getattr(back, name).tobytes()


def test_partition_examples():
    f = partition_folds(10, 2, 7)
    assert sorted(f.sizes()) == [5, 5]
    g = partition_folds(9, 2, 7)
    assert sorted(g.sizes()) == [4, 5]
    assert np.array_equal(partition_folds(9, 2, 7).fold_of, g.fold_of)


def test_partition_errors():
    with pytest.raises(ValueError):
        partition_folds(10, 1, 0)
    with pytest.raises(ValueError):
        partition_folds(3, 4, 0)


@settings(max_examples=200)
@given(st.integers(2, 400), st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_partition_is_a_near_equal_set_partition(n, K, seed):
    if K > n:
        K = n
    f = partition_folds(n, K, seed)
    sizes = f.sizes()
    assert max(sizes) - min(sizes) <= 1
    assert sum(sizes) == n
    all_rows = np.concatenate([f.rows(k) for k in range(K)])
    assert np.array_equal(np.sort(all_rows), np.arange(n))
    for k in range(K):
        assert np.intersect1d(f.rows(k), f.complement(k)).size == 0
