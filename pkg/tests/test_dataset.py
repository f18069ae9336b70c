import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from effectgate.dataset import (
    Dataset,
    VariableSpec,
    check_schema,
    describe_by_treatment,
    domain_schema,
    load_csv,
    read_csv_text,
    to_csv_text,
    write_csv,
)
from effectgate.exceptions import DomainError, ParseError, SchemaError

HEADER = "R1,PvP,Web3,Time_Play_Level1,Total_PvE_Battle,Total_Session"
ROWS = [
    "1,1,0,7.5,12,4",
    "0,0,1,3.25,0,1",
    "1,0,0,10.0,5,2",
    "0,1,1,6.125,20,9",
]


def _csv(rows, header=HEADER):
    return "\n".join([header, *rows]) + "\n"


def test_load_valid_fixture(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(_csv(ROWS))
    d = load_csv(path, domain_schema())
    assert d.n == 4
    assert d.dropped == 0
    assert d.treatment == "PvP" and d.outcome == "R1"
    assert d.column("Total_PvE_Battle").tolist() == [12, 0, 5, 20]


def test_missing_cell_drops_row():
    rows = list(ROWS)
    rows[2] = "1,0,0,10.0,5,"
    d = read_csv_text(_csv(rows), domain_schema())
    assert d.n == 3
    assert d.dropped == 1


def test_non_binary_treatment_names_row():
    rows = list(ROWS)
    rows[1] = "0,2,1,3.25,0,1"
    with pytest.raises(DomainError) as exc:
        read_csv_text(_csv(rows), domain_schema())
    assert exc.value.row == 1
    assert exc.value.column == "PvP"
    assert "row 1" in str(exc.value)


def test_row_index_refers_to_source_rows_after_drops():
    rows = ["1,1,0,7.5,12,", "0,3,1,3.25,0,1"]
    with pytest.raises(DomainError) as exc:
        read_csv_text(_csv(rows), domain_schema())
    assert exc.value.row == 1


def test_non_numeric_cell():
    rows = list(ROWS)
    rows[3] = "0,1,1,abc,20,9"
    with pytest.raises(ParseError) as exc:
        read_csv_text(_csv(rows), domain_schema())
    assert exc.value.row == 3 and exc.value.column == "Time_Play_Level1"


def test_missing_column_and_empty_file():
    with pytest.raises(SchemaError, match="Total_Session"):
        read_csv_text(_csv([r.rsplit(",", 1)[0] for r in ROWS], HEADER.rsplit(",", 1)[0]), domain_schema())
    with pytest.raises(SchemaError):
        read_csv_text("", domain_schema())


def test_header_order_and_extra_columns_are_ignored():
    cols = HEADER.split(",")
    perm = [5, 3, 0, 2, 1, 4]
    header = ",".join([cols[i] for i in perm] + ["extra"])
    rows = [",".join([r.split(",")[i] for i in perm] + ["x"]) for r in ROWS]
    d = read_csv_text(_csv(rows, header), domain_schema())
    ref = read_csv_text(_csv(ROWS), domain_schema())
    assert np.array_equal(d.rows, ref.rows)
    assert d.names == ref.names


def test_count_columns_accept_integral_floats():
    rows = list(ROWS)
    rows[0] = "1,1,0,7.5,12.0000000001,4"
    d = read_csv_text(_csv(rows), domain_schema())
    assert d.column("Total_PvE_Battle")[0] == 12.0
    rows[0] = "1,1,0,7.5,12.5,4"
    with pytest.raises(DomainError):
        read_csv_text(_csv(rows), domain_schema())
    rows[0] = "1,1,0,7.5,-1,4"
    with pytest.raises(DomainError):
        read_csv_text(_csv(rows), domain_schema())


def test_variable_spec_validation():
    assert VariableSpec("R1", "binary", "outcome").window == "outcome"
    assert VariableSpec("X", "count").window == "pre-treatment"
    with pytest.raises(SchemaError):
        VariableSpec("X", "ordinal")
    with pytest.raises(SchemaError):
        VariableSpec("X", "binary", "instrument")
    with pytest.raises(SchemaError):
        VariableSpec("X", "binary", "covariate", "outcome")
    with pytest.raises(SchemaError):
        VariableSpec("", "binary")
    spec = VariableSpec("T", "binary", "treatment")
    assert VariableSpec.from_dict(spec.to_dict()) == spec


def test_schema_cross_checks():
    t = VariableSpec("T", "binary", "treatment")
    y = VariableSpec("Y", "binary", "outcome")
    check_schema([t, y])
    with pytest.raises(SchemaError, match="duplicate"):
        check_schema([t, y, VariableSpec("T", "count")])
    with pytest.raises(SchemaError, match="treatment"):
        check_schema([y, VariableSpec("X", "count")])
    with pytest.raises(SchemaError, match="binary"):
        check_schema([VariableSpec("T", "count", "treatment"), y])
    check_schema([y], require_roles=False)


def test_dataset_is_immutable_and_rejects_empty():
    d = Dataset([VariableSpec("A", "binary")], [[0], [1]])
    with pytest.raises(ValueError):
        d.rows[0, 0] = 1
    with pytest.raises(SchemaError):
        Dataset([VariableSpec("A", "binary")], np.zeros((0, 1)))
    with pytest.raises(SchemaError):
        d.column("B")


def test_describe_hand_fixture(binary_ty):
    desc = describe_by_treatment(binary_ty)
    assert desc.treated["Y"] == 1.0
    assert desc.control["Y"] == 0.5
    assert desc.naive_difference == 0.5
    assert (desc.n_treated, desc.n_control) == (2, 2)


def test_describe_all_treated_leaves_control_undefined():
    specs = [VariableSpec("T", "binary", "treatment"), VariableSpec("Y", "binary", "outcome")]
    d = Dataset(specs, [[1, 1], [1, 0]])
    desc = describe_by_treatment(d)
    assert desc.control is None
    assert desc.naive_difference is None and not desc.naive_defined
    assert desc.to_dict()["control"] is None


def test_fingerprint_tracks_content(binary_ty):
    same = Dataset(binary_ty.specs, binary_ty.rows)
    assert same.fingerprint() == binary_ty.fingerprint()
    other = binary_ty.replace_column("Y", [1, 1, 1, 1])
    assert other.fingerprint() != binary_ty.fingerprint()


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 25))
    cols = [
        draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)),
        draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)),
        draw(st.lists(st.integers(0, 500), min_size=n, max_size=n)),
        draw(st.lists(finite, min_size=n, max_size=n)),
    ]
    specs = [
        VariableSpec("T", "binary", "treatment"),
        VariableSpec("Y", "binary", "outcome"),
        VariableSpec("C", "count"),
        VariableSpec("X", "continuous"),
    ]
    return Dataset(specs, np.array(cols, dtype=float).T, require_roles=True)


@given(datasets())
def test_csv_round_trip(d):
    back = read_csv_text(to_csv_text(d), list(d.specs))
    assert back.n == d.n
    np.testing.assert_allclose(back.rows, d.rows, rtol=1e-12, atol=1e-12)


def test_write_then_load_file(tmp_path, binary_ty):
    path = tmp_path / "out.csv"
    write_csv(binary_ty, path)
    assert np.array_equal(load_csv(path, list(binary_ty.specs)).rows, binary_ty.rows)


@given(datasets())
def test_describe_matches_brute_force(d):
    desc = describe_by_treatment(d)
    for j, name in enumerate(d.names):
        assert desc.overall[name] == pytest.approx(sum(r[j] for r in d.rows.tolist()) / d.n, rel=1e-12, abs=1e-9)
        treated = [r[j] for r in d.rows.tolist() if r[0] == 1]
        if treated:
            assert desc.treated[name] == pytest.approx(sum(treated) / len(treated), rel=1e-12, abs=1e-9)
        else:
            assert desc.treated is None


@given(datasets(), st.randoms())
def test_row_permutation_leaves_statistics_unchanged(d, rnd):
    order = list(range(d.n))
    rnd.shuffle(order)
    a = describe_by_treatment(d)
    b = describe_by_treatment(d.take(order))
    for name in d.names:
        assert b.overall[name] == pytest.approx(a.overall[name], rel=1e-12, abs=1e-9)
    assert (a.n_treated, a.n_control) == (b.n_treated, b.n_control)
