import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from odfm.datamodel import (
    DomainError,
    MultiSeries,
    ParseError,
    TransformSpec,
    apply_transform,
    center,
    load_csv,
    load_sidecar,
    replace_at,
    save_csv,
    save_sidecar,
)


def test_load_csv_rows_orientation(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("1,2,3,4,5\n6,7,8,9,10\n-1,0,1,2,3\n")
    series = load_csv(path, orientation="rows")
    assert series.n_components == 3
    assert series.n_times == 5
    assert_array_equal(series.values[1], [6, 7, 8, 9, 10])


def test_load_csv_header_labels(tmp_path):
    path = tmp_path / "labeled.csv"
    path.write_text("cpi,ip,rbndl\n1,2,3\n4,5,6\n7,8,9\n10,11,12\n")
    series = load_csv(path)
    assert series.labels == ("cpi", "ip", "rbndl")
    assert series.n_components == 3
    assert series.n_times == 4
    assert_array_equal(series.values[0], [1, 4, 7, 10])


def test_load_csv_blank_cell_names_coordinates(tmp_path):
    path = tmp_path / "blank.csv"
    path.write_text("1,2,3\n4,,6\n")
    with pytest.raises(ParseError, match="row 2, column 2"):
        load_csv(path, orientation="rows", header=False)


def test_load_csv_non_numeric_names_coordinates(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,oops\n")
    with pytest.raises(ParseError, match="row 3, column 2"):
        load_csv(path)


def test_load_csv_ragged_row(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("1,2,3\n4,5\n")
    with pytest.raises(ParseError, match="ragged row 2"):
        load_csv(path, orientation="rows", header=False)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    series = MultiSeries(rng.standard_normal((4, 9)), labels=("a", "b", "c", "d"))
    path = tmp_path / "round.csv"
    save_csv(series, path)
    back = load_csv(path)
    assert back.labels == series.labels
    assert_array_equal(back.values, series.values)


def test_sidecar_round_trip(tmp_path):
    series = MultiSeries(np.ones((2, 3)), labels=("u", "v"), time_origin="1960Q1")
    specs = [TransformSpec("diff"), TransformSpec("none")]
    path = tmp_path / "panel.meta.json"
    save_sidecar(series, path, specs)
    meta = load_sidecar(path)
    assert meta["labels"] == ["u", "v"]
    assert meta["time_origin"] == "1960Q1"
    assert [s.kind for s in meta["transforms"]] == ["diff", "none"]


def test_invariants_rejected():
    with pytest.raises(ValueError):
        MultiSeries(np.ones((2, 1)))
    with pytest.raises(ValueError):
        MultiSeries(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        MultiSeries(np.ones((2, 3)), labels=("only-one",))


def test_values_are_read_only():
    series = MultiSeries(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        series.values[0, 0] = 1.0


def test_transform_constant_diff():
    series = MultiSeries(np.full((1, 6), 3.7))
    out = apply_transform(series, [TransformSpec("diff")])
    assert out.n_times == 5
    assert_allclose(out.values, 0.0, atol=0)


def test_transform_geometric_log_diff():
    r = 1.3
    x = 2.0 * r ** np.arange(8)
    out = apply_transform(MultiSeries(x[None, :]), [TransformSpec("log-diff")])
    assert_allclose(out.values, np.log(r), rtol=1e-12)


def test_transform_double_log_diff_hand_case():
    # ln8 - 2*ln4 + ln2 = 0 and ln4 - 2*ln2 + ln1 = 0
    series = MultiSeries(np.array([[1.0, 2.0, 4.0, 8.0]]))
    out = apply_transform(series, [TransformSpec("double-log-diff")])
    assert out.n_times == 2
    assert_allclose(out.values, 0.0, atol=1e-14)


def test_transform_mixed_orders_align_at_the_end():
    values = np.array([[1.0, 2.0, 3.0, 4.0, 5.0], [1.0, 2.0, 4.0, 8.0, 16.0]])
    out = apply_transform(
        MultiSeries(values), [TransformSpec("none"), TransformSpec("double-log-diff")]
    )
    assert out.n_times == 3
    # untouched component keeps its trailing values
    assert_array_equal(out.values[0], [3.0, 4.0, 5.0])
    assert_allclose(out.values[1], 0.0, atol=1e-14)


def test_transform_rejects_nonpositive_log():
    series = MultiSeries(np.array([[1.0, -2.0, 3.0]]), labels=("px",))
    with pytest.raises(DomainError, match="'px'.*t=2"):
        apply_transform(series, [TransformSpec("log-diff")])


def test_transform_spec_validation():
    with pytest.raises(ValueError):
        TransformSpec("cube-root")


def test_center_cases():
    zero = MultiSeries(np.zeros((2, 4)))
    out, means = center(zero)
    assert_array_equal(out.values, zero.values)
    assert_array_equal(means, [0.0, 0.0])

    const = MultiSeries(np.full((1, 5), 2.5))
    out, means = center(const)
    assert_allclose(out.values, 0.0, atol=0)
    assert_allclose(means, [2.5])

    panel = MultiSeries(np.array([[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]]))
    out, means = center(panel)
    assert_allclose(means, [2.0, 4.0])
    assert_allclose(out.values, [[-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])


def test_diff_commutes_with_centering():
    # differencing removes the subtracted mean, up to float roundoff
    rng = np.random.default_rng(7)
    series = MultiSeries(rng.standard_normal((3, 20)))
    centered, _ = center(series)
    specs = [TransformSpec("diff")] * 3
    assert_allclose(
        apply_transform(centered, specs).values,
        apply_transform(series, specs).values,
        atol=1e-14,
    )


def test_replace_at():
    rng = np.random.default_rng(3)
    series = MultiSeries(rng.standard_normal((3, 6)))

    same = replace_at(series, 4, series.column(4))
    assert_array_equal(same.values, series.values)

    zeroed = replace_at(series, 6, np.zeros(3))
    assert_array_equal(zeroed.values[:, 5], 0.0)
    assert_array_equal(zeroed.values[:, :5], series.values[:, :5])

    saved = series.column(2)
    round_trip = replace_at(replace_at(series, 2, np.ones(3)), 2, saved)
    assert_array_equal(round_trip.values, series.values)

    with pytest.raises(IndexError):
        replace_at(series, 0, np.zeros(3))
    with pytest.raises(IndexError):
        replace_at(series, 7, np.zeros(3))
