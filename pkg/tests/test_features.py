"""Weather math, stress labeling, zonal medians, and dataset assembly."""

import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orchardstress import (
    CELL_FEATURE_BANDS,
    FEATURE_NAMES,
    CellFeatureTable,
    FormatError,
    GridSpec,
    Raster,
    Sample,
    StressClass,
    TreeRecord,
    WeatherRecord,
    assemble_dataset,
    cell_median_features,
    compute_vpd,
    fahrenheit_to_celsius,
    label_stress,
    load_cell_features_csv,
    load_dataset_csv,
    load_swp_csv,
    load_trees_csv,
    load_weather_csv,
    match_tree_to_cell,
    samples_to_matrix,
    write_cell_features_csv,
    write_dataset_csv,
)

D1 = dt.date(2017, 6, 20)
D2 = dt.date(2017, 7, 5)


# ---------------------------------------------------------------------------
# Weather
# ---------------------------------------------------------------------------


def test_fahrenheit_to_celsius():
    assert fahrenheit_to_celsius(32.0) == 0.0
    assert fahrenheit_to_celsius(212.0) == pytest.approx(100.0)


def tetens_reference(temp_f, rh):
    """Direct transcription of the saturation-pressure deficit formula."""
    t = (temp_f - 32.0) * 5.0 / 9.0
    e_s = 0.6108 * np.exp(17.27 * t / (t + 237.3))
    return e_s * (1.0 - rh / 100.0)


# Hand-checked field values: (air temp F, relative humidity %, vpd kPa).
FIELD_VPD = [
    (90.55, 31.5, 3.355),
    (90.80, 32.5, 3.332),
    (83.30, 58.5, 1.615),
    (90.20, 28.7, 3.455),
    (89.54, 49.3, 2.404),
]


@pytest.mark.parametrize("temp_f,rh,expected", FIELD_VPD)
def test_vpd_matches_field_measurements(temp_f, rh, expected):
    assert compute_vpd(temp_f, rh) == pytest.approx(expected, abs=0.005)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(min_value=30.0, max_value=120.0),
    st.floats(min_value=0.0, max_value=100.0),
)
def test_vpd_agrees_with_reference_and_is_nonnegative(temp_f, rh):
    got = compute_vpd(temp_f, rh)
    assert got == pytest.approx(tetens_reference(temp_f, rh), rel=1e-12)
    assert got >= 0.0
    assert compute_vpd(temp_f, 100.0) == pytest.approx(0.0, abs=1e-12)


def test_vpd_increases_with_temperature_at_fixed_humidity():
    temps = np.linspace(40, 110, 50)
    vals = [compute_vpd(t, 40.0) for t in temps]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_weather_record_validates_vpd_consistency():
    with pytest.raises(FormatError, match="inconsistent"):
        WeatherRecord(D1, 90.55, 31.5, 5.0, 2.0)
    ok = WeatherRecord(D1, 90.55, 31.5, 5.0, 3.355)
    assert ok.vpd_kpa == 3.355


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(humidity_pct=101.0),
        dict(humidity_pct=-0.5),
        dict(wind_mph=-1.0),
    ],
)
def test_weather_record_range_checks(kwargs):
    base = dict(
        date=D1, air_temp_f=85.1, humidity_pct=43.6, wind_mph=5.0,
        vpd_kpa=compute_vpd(85.1, 43.6),
    )
    base.update(kwargs)
    if "humidity_pct" in kwargs:
        base["vpd_kpa"] = 1.0  # consistency check comes after range checks
    with pytest.raises(FormatError):
        WeatherRecord(**base)


# ---------------------------------------------------------------------------
# Stress labels
# ---------------------------------------------------------------------------


def test_label_boundaries_inclusive():
    assert label_stress(-0.4) is StressClass.LOW
    assert label_stress(-3.0) is StressClass.SEVERE
    assert label_stress(-0.41) is StressClass.MODERATE
    assert label_stress(-2.99) is StressClass.MODERATE
    assert label_stress(0.0) is StressClass.LOW
    assert label_stress(-8.0) is StressClass.SEVERE


def test_label_sweep_is_monotone_in_stress_index():
    swp = np.linspace(0.0, -8.0, 2001)
    indices = [label_stress(v).index for v in swp]
    assert indices == sorted(indices)
    assert set(indices) == {0, 1, 2}


def test_stress_class_indices_round_trip():
    for cls in (StressClass.LOW, StressClass.MODERATE, StressClass.SEVERE):
        assert StressClass(cls.value) is cls
    assert StressClass.LOW.index == 0
    assert StressClass.MODERATE.index == 1
    assert StressClass.SEVERE.index == 2


# ---------------------------------------------------------------------------
# Grid and tree matching
# ---------------------------------------------------------------------------


def test_grid_cover_rounds_up():
    grid = GridSpec.cover(width=120, height=100, cell_size_px=56)
    assert (grid.n_rows, grid.n_cols) == (2, 3)
    assert GridSpec.cover(56, 56, 56) == GridSpec(56, 1, 1)


def test_grid_cover_rejects_nonpositive_cell():
    with pytest.raises(FormatError):
        GridSpec.cover(100, 100, 0)


def test_match_tree_floor_convention():
    geo = Raster(112, 112, 0.08, (0.0, 0.0), {"Red": np.zeros((112, 112))}).geometry
    grid = GridSpec.cover(112, 112, 56)
    cell_m = 56 * 0.08
    inside = TreeRecord("t1", "b1", 0, (cell_m, cell_m))  # exactly on the seam
    assert match_tree_to_cell(inside, geo, grid) == (1, 1)
    corner = TreeRecord("t2", "b1", 0, (0.0, 0.0))
    assert match_tree_to_cell(corner, geo, grid) == (0, 0)


def test_match_tree_outside_extent_raises():
    geo = Raster(56, 56, 0.08, (0.0, 0.0), {"Red": np.zeros((56, 56))}).geometry
    grid = GridSpec.cover(56, 56, 56)
    stray = TreeRecord("t9", "b1", 0, (99.0, 1.0))
    with pytest.raises(ValueError, match="t9"):
        match_tree_to_cell(stray, geo, grid)


def test_treatment_bar_range_enforced():
    with pytest.raises(FormatError):
        TreeRecord("t1", "b1", 5, (0.0, 0.0))


# ---------------------------------------------------------------------------
# Cell medians
# ---------------------------------------------------------------------------


def test_cell_median_even_count_averages_middle_pair():
    grid_vals = np.array([[1.0, 2.0], [3.0, 10.0]], dtype=np.float32)
    r = Raster(2, 2, 0.08, (0.0, 0.0), {"Thermal": grid_vals})
    med = cell_median_features(r, GridSpec.cover(2, 2, 2))
    assert med["Thermal"][0, 0] == pytest.approx(2.5)  # mean of 2 and 3


def test_cell_median_skips_nan_and_marks_empty_cells():
    vals = np.full((2, 4), np.nan, dtype=np.float32)
    vals[0, 0], vals[1, 1] = 4.0, 8.0  # left cell has two finite pixels
    r = Raster(4, 2, 0.08, (0.0, 0.0), {"NDVI": vals})
    med = cell_median_features(r, GridSpec.cover(4, 2, 2))["NDVI"]
    assert med[0, 0] == pytest.approx(6.0)
    assert np.isnan(med[0, 1])


def test_cell_median_partial_edge_cells():
    vals = np.arange(15, dtype=np.float32).reshape(3, 5)
    r = Raster(5, 3, 0.08, (0.0, 0.0), {"Red": vals})
    med = cell_median_features(r, GridSpec.cover(5, 3, 2))["Red"]
    assert med.shape == (2, 3)
    # last column cell is 2 rows x 1 col: pixels 4 and 9
    assert med[0, 2] == pytest.approx(6.5)
    # bottom row cell is 1x2: pixels 10, 11
    assert med[1, 0] == pytest.approx(10.5)


def test_cell_median_matches_numpy_on_random_blocks():
    rng = np.random.default_rng(7)
    vals = rng.normal(size=(112, 168)).astype(np.float32)
    vals[rng.random(vals.shape) < 0.3] = np.nan
    r = Raster(168, 112, 0.08, (0.0, 0.0), {"PSRI": vals})
    med = cell_median_features(r, GridSpec.cover(168, 112, 56))["PSRI"]
    block = vals[:56, 56:112].astype(np.float64)
    assert med[0, 1] == pytest.approx(np.nanmedian(block))


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def make_table(values_by_band):
    r = Raster(
        56, 56, 0.08, (0.0, 0.0),
        {b: np.full((56, 56), v, dtype=np.float32) for b, v in values_by_band.items()},
    )
    grid = GridSpec.cover(56, 56, 56)
    return CellFeatureTable(r.geometry, grid, cell_median_features(r, grid))


def weather_for(date, temp_f=85.1, rh=43.6, wind=5.0):
    return WeatherRecord(date, temp_f, rh, wind, compute_vpd(temp_f, rh))


TREE = TreeRecord("w01", "b1", 2, (2.0, 2.0))
GOOD_BANDS = {"Thermal": 300.0, "NDVI": 0.7, "NDRE": 0.2, "PSRI": 0.05}


def test_assemble_one_sample():
    result = assemble_dataset(
        cell_features={D1: make_table(GOOD_BANDS)},
        trees=[TREE],
        weather=[weather_for(D1)],
        swp_rows=[("w01", D1, -1.5)],
    )
    assert result.dropped_nan == 0 and result.excluded == 0
    (sample,) = result.samples
    assert sample.stress is StressClass.MODERATE
    vec = dict(zip(FEATURE_NAMES, sample.features))
    assert vec["thermal"] == pytest.approx(300.0)
    assert vec["ndvi"] == pytest.approx(0.7, abs=1e-6)
    assert vec["air_temp_f"] == 85.1
    assert vec["vpd_kpa"] == pytest.approx(compute_vpd(85.1, 43.6))
    assert vec["wind_mph"] == 5.0


def test_assemble_counts_excluded_dates():
    tables = {D1: make_table(GOOD_BANDS), D2: make_table(GOOD_BANDS)}
    result = assemble_dataset(
        cell_features=tables,
        trees=[TREE],
        weather=[weather_for(D1), weather_for(D2)],
        swp_rows=[("w01", D1, -1.0), ("w01", D2, -2.0)],
        excluded_dates=[D2],
    )
    assert len(result.samples) == 1
    assert result.excluded == 1
    assert result.samples[0].date == D1


def test_assemble_drops_nan_features_with_count():
    bands = dict(GOOD_BANDS)
    bands["NDRE"] = np.nan
    result = assemble_dataset(
        cell_features={D1: make_table(bands)},
        trees=[TREE],
        weather=[weather_for(D1)],
        swp_rows=[("w01", D1, -1.0)],
    )
    assert result.samples == []
    assert result.dropped_nan == 1


def test_assemble_accounting_invariant():
    tables = {D1: make_table(GOOD_BANDS), D2: make_table(GOOD_BANDS)}
    rows = [("w01", D1, -1.0), ("w01", D2, -2.0)]
    result = assemble_dataset(
        tables, [TREE], [weather_for(D1), weather_for(D2)], rows, excluded_dates=[D1]
    )
    assert len(result.samples) + result.dropped_nan + result.excluded == len(rows)


def test_assemble_unknown_tree_and_missing_date_are_errors():
    tables = {D1: make_table(GOOD_BANDS)}
    with pytest.raises(ValueError, match="mystery"):
        assemble_dataset(tables, [TREE], [weather_for(D1)], [("mystery", D1, -1.0)])
    with pytest.raises(ValueError, match="2017-07-05"):
        assemble_dataset(tables, [TREE], [weather_for(D1)], [("w01", D2, -1.0)])


def test_samples_to_matrix_shapes_and_label_encoding():
    result = assemble_dataset(
        {D1: make_table(GOOD_BANDS)},
        [TREE],
        [weather_for(D1)],
        [("w01", D1, -0.2)],
    )
    X, y_swp, y_cls = samples_to_matrix(result.samples, FEATURE_NAMES)
    assert X.shape == (1, 7)
    assert y_swp[0] == -0.2
    assert y_cls[0] == StressClass.LOW.index
    X2, _, _ = samples_to_matrix(result.samples, ("ndvi", "thermal"))
    assert X2.shape == (1, 2)
    assert X2[0, 0] == pytest.approx(0.7, abs=1e-6)


# ---------------------------------------------------------------------------
# CSV round trips
# ---------------------------------------------------------------------------


def test_trees_csv_round_trip(tmp_path):
    path = tmp_path / "trees.csv"
    path.write_text(
        "tree_id,block_id,treatment_bar,x_m,y_m\n"
        "w01,b1,2,2.25,4.5\n"
        "w02,b2,0,1.0,1.0\n"
    )
    trees = load_trees_csv(path)
    assert trees[0] == TreeRecord("w01", "b1", 2, (2.25, 4.5))
    assert len(trees) == 2


def test_trees_csv_rejects_bad_rows(tmp_path):
    path = tmp_path / "trees.csv"
    path.write_text("tree_id,block_id,treatment_bar,x_m,y_m\nw01,b1,9,0,0\n")
    with pytest.raises(FormatError):
        load_trees_csv(path)
    path.write_text("tree_id,block_id\nw01,b1\n")
    with pytest.raises(FormatError, match="column"):
        load_trees_csv(path)


def test_weather_csv_blank_vpd_computed(tmp_path):
    path = tmp_path / "weather.csv"
    path.write_text(
        "date,air_temp_f,humidity_pct,wind_mph,vpd_kpa\n"
        "2017-06-20,90.55,31.5,5.2,\n"
        "2017-07-05,83.30,58.5,3.1,1.615\n"
    )
    records = load_weather_csv(path)
    assert records[0].vpd_kpa == pytest.approx(compute_vpd(90.55, 31.5))
    assert records[1].vpd_kpa == 1.615


def test_swp_csv_parses_rows(tmp_path):
    path = tmp_path / "swp.csv"
    path.write_text("tree_id,date,swp_bars\nw01,2017-06-20,-1.25\n")
    assert load_swp_csv(path) == [("w01", D1, -1.25)]
    path.write_text("tree_id,date,swp_bars\nw01,20-06-2017,-1.25\n")
    with pytest.raises(FormatError):
        load_swp_csv(path)


def test_dataset_csv_round_trip(tmp_path):
    result = assemble_dataset(
        {D1: make_table(GOOD_BANDS)},
        [TREE],
        [weather_for(D1)],
        [("w01", D1, -3.7)],
    )
    path = tmp_path / "dataset.csv"
    write_dataset_csv(result.samples, path)
    back = load_dataset_csv(path)
    assert len(back) == 1
    orig, loaded = result.samples[0], back[0]
    assert loaded.tree_id == orig.tree_id and loaded.date == orig.date
    assert loaded.swp_bars == orig.swp_bars  # repr round trip is exact
    assert loaded.stress is orig.stress
    np.testing.assert_array_equal(loaded.features, orig.features)


def test_cell_features_csv_round_trip(tmp_path):
    table = make_table(GOOD_BANDS)
    path = tmp_path / "cells.csv"
    write_cell_features_csv(table, path)
    back = load_cell_features_csv(path)
    assert back.geometry == table.geometry
    assert back.grid == table.grid
    assert set(back.medians) == set(table.medians)
    for band in CELL_FEATURE_BANDS:
        np.testing.assert_array_equal(back.medians[band], table.medians[band])


def test_cell_features_csv_preserves_nan(tmp_path):
    bands = dict(GOOD_BANDS)
    bands["PSRI"] = np.nan
    table = make_table(bands)
    path = tmp_path / "cells.csv"
    write_cell_features_csv(table, path)
    back = load_cell_features_csv(path)
    assert np.isnan(back.medians["PSRI"][0, 0])
