"""Grid aggregation, weather fusion, stress labeling, and dataset assembly.

Each observation joins three sources keyed by (tree, date): per-cell
median image features, the day's noon weather, and the ground-measured
stem water potential. Feature vectors always use the canonical 7-slot
order in FEATURE_NAMES; reduced models select named subsets downstream
but never reorder.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError
from .raster import Raster, RasterGeometry

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "thermal",
    "ndvi",
    "ndre",
    "psri",
    "air_temp_f",
    "vpd_kpa",
    "wind_mph",
)

# Cell medians are read from these raster bands, in feature order.
CELL_FEATURE_BANDS = ("Thermal", "NDVI", "NDRE", "PSRI")

# Default grid cell: 56 px * 0.08 m/px = 4.48 m, about one canopy.
DEFAULT_CELL_SIZE_PX = 56

VPD_CONSISTENCY_KPA = 0.005

# The first flight lacked a usable red-edge band, so assembly skips it
# unless told otherwise.
DEFAULT_EXCLUDED_DATES = (dt.date(2017, 7, 11),)

LOW_STRESS_MIN_BARS = -0.4
SEVERE_STRESS_MAX_BARS = -3.0


class StressClass(str, Enum):
    LOW = "Low"
    MODERATE = "Moderate"
    SEVERE = "Severe"

    @property
    def index(self) -> int:
        return _STRESS_ORDER.index(self)


_STRESS_ORDER = (StressClass.LOW, StressClass.MODERATE, StressClass.SEVERE)

STRESS_CLASS_NAMES = tuple(c.value for c in _STRESS_ORDER)


def stress_from_index(i: int) -> StressClass:
    return _STRESS_ORDER[i]


@dataclass(frozen=True)
class GridSpec:
    """Square-cell grid covering a raster; partial cells at the edges."""

    cell_size_px: int
    n_rows: int
    n_cols: int

    @classmethod
    def cover(cls, width: int, height: int, cell_size_px: int) -> "GridSpec":
        if cell_size_px <= 0:
            raise FormatError("cell_size_px must be positive")
        return cls(
            cell_size_px=cell_size_px,
            n_rows=math.ceil(height / cell_size_px),
            n_cols=math.ceil(width / cell_size_px),
        )


@dataclass(frozen=True)
class TreeRecord:
    tree_id: str
    block_id: str
    treatment_bar: int
    location: tuple[float, float]  # (x, y) local meters

    def __post_init__(self) -> None:
        if self.treatment_bar not in (0, 1, 2, 3, 4):
            raise FormatError(
                f"treatment_bar must be in 0..4, got {self.treatment_bar}"
            )


@dataclass(frozen=True)
class WeatherRecord:
    date: dt.date
    air_temp_f: float
    humidity_pct: float
    wind_mph: float
    vpd_kpa: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.humidity_pct <= 100.0:
            raise FormatError(f"humidity {self.humidity_pct} outside [0, 100]")
        if self.wind_mph < 0.0:
            raise FormatError(f"wind {self.wind_mph} must be >= 0")
        if self.vpd_kpa < 0.0:
            raise FormatError(f"vpd {self.vpd_kpa} must be >= 0")
        expected = compute_vpd(self.air_temp_f, self.humidity_pct)
        if abs(self.vpd_kpa - expected) > VPD_CONSISTENCY_KPA:
            raise FormatError(
                f"vpd {self.vpd_kpa} kPa inconsistent with temperature/humidity "
                f"(expected {expected:.4f} kPa) on {self.date.isoformat()}"
            )


@dataclass(frozen=True)
class Sample:
    """One (tree, date) observation with the canonical 7-slot feature vector."""

    tree_id: str
    date: dt.date
    features: np.ndarray  # order per FEATURE_NAMES
    swp_bars: float
    stress: StressClass

    def __post_init__(self) -> None:
        vec = np.asarray(self.features, dtype=np.float64)
        if vec.shape != (len(FEATURE_NAMES),):
            raise FormatError(
                f"feature vector must have {len(FEATURE_NAMES)} slots, "
                f"got shape {vec.shape}"
            )
        object.__setattr__(self, "features", vec)
        if self.stress is not label_stress(self.swp_bars):
            raise FormatError(
                f"stress label {self.stress.value} inconsistent with "
                f"swp {self.swp_bars} bars"
            )


def fahrenheit_to_celsius(t: float) -> float:
    return (t - 32.0) * 5.0 / 9.0


def compute_vpd(air_temp_f: float, humidity_pct: float) -> float:
    """Vapor pressure deficit in kPa from Tetens saturation pressure.

    e_s = 0.6108 * exp(17.27 * T / (T + 237.3)) with T in Celsius;
    VPD = e_s * (1 - RH/100).
    """
    if not 0.0 <= humidity_pct <= 100.0:
        raise ValueError(f"humidity {humidity_pct} outside [0, 100]")
    t_c = fahrenheit_to_celsius(air_temp_f)
    e_sat = 0.6108 * math.exp(17.27 * t_c / (t_c + 237.3))
    return e_sat * (1.0 - humidity_pct / 100.0)


def label_stress(swp_bars: float) -> StressClass:
    """Low iff swp >= -0.4 bars, Severe iff swp <= -3 bars, else Moderate."""
    if not math.isfinite(swp_bars):
        raise ValueError(f"swp must be finite, got {swp_bars}")
    if swp_bars >= LOW_STRESS_MIN_BARS:
        return StressClass.LOW
    if swp_bars <= SEVERE_STRESS_MAX_BARS:
        return StressClass.SEVERE
    return StressClass.MODERATE


def cell_median_features(raster: Raster, grid: GridSpec) -> dict[str, np.ndarray]:
    """Median of each band's finite pixels per grid cell.

    Returns band name -> (n_rows, n_cols) float64 array. A cell with no
    finite pixels gets NaN. An even count of finite pixels yields the
    mean of the two middle order statistics.
    """
    out = {
        name: np.full((grid.n_rows, grid.n_cols), np.nan)
        for name in raster.band_names
    }
    c = grid.cell_size_px
    for name, grid_vals in raster.bands.items():
        dest = out[name]
        for r in range(grid.n_rows):
            rows = grid_vals[r * c : (r + 1) * c]
            for k in range(grid.n_cols):
                block = rows[:, k * c : (k + 1) * c]
                finite = block[np.isfinite(block)]
                if finite.size:
                    dest[r, k] = float(np.median(finite.astype(np.float64)))
    return out


def match_tree_to_cell(
    tree: TreeRecord, geometry: RasterGeometry, grid: GridSpec
) -> tuple[int, int]:
    """Grid cell (row, col) containing the tree; floor convention on boundaries."""
    x, y = tree.location
    if not geometry.contains_point(x, y):
        raise ValueError(
            f"tree {tree.tree_id} at ({x}, {y}) falls outside the raster extent"
        )
    ox, oy = geometry.origin
    col = int(math.floor((x - ox) / geometry.pixel_size_m / grid.cell_size_px))
    row = int(math.floor((y - oy) / geometry.pixel_size_m / grid.cell_size_px))
    return row, col


@dataclass
class CellFeatureTable:
    """Per-cell medians for one flight date, plus the geometry that made them."""

    geometry: RasterGeometry
    grid: GridSpec
    medians: dict[str, np.ndarray]

    def features_for_cell(self, row: int, col: int) -> dict[str, float]:
        return {name: float(vals[row, col]) for name, vals in self.medians.items()}


@dataclass
class AssemblyResult:
    samples: list[Sample]
    dropped_nan: int
    excluded: int


def assemble_dataset(
    cell_features: Mapping[dt.date, CellFeatureTable],
    trees: Sequence[TreeRecord],
    weather: Sequence[WeatherRecord],
    swp_rows: Sequence[tuple[str, dt.date, float]],
    excluded_dates: Iterable[dt.date] = (),
) -> AssemblyResult:
    """Join cell features, weather, and SWP measurements into samples.

    One sample per (tree, date) measurement. Measurements on excluded
    dates are omitted; samples with any NaN feature are dropped and
    counted. Unmatched tree ids, dates without weather, and dates
    without cell features are reported with their identifiers.
    """
    tree_by_id = {t.tree_id: t for t in trees}
    weather_by_date = {w.date: w for w in weather}
    excluded_set = set(excluded_dates)

    samples: list[Sample] = []
    dropped = 0
    excluded_count = 0
    for tree_id, date, swp in swp_rows:
        if date in excluded_set:
            excluded_count += 1
            continue
        tree = tree_by_id.get(tree_id)
        if tree is None:
            raise ValueError(f"swp row references unknown tree id {tree_id!r}")
        wx = weather_by_date.get(date)
        if wx is None:
            raise ValueError(
                f"no weather record for date {date.isoformat()} (tree {tree_id})"
            )
        table = cell_features.get(date)
        if table is None:
            raise ValueError(
                f"no cell features for date {date.isoformat()} (tree {tree_id})"
            )
        row, col = match_tree_to_cell(tree, table.geometry, table.grid)
        cell = table.features_for_cell(row, col)
        try:
            image_feats = [cell[band] for band in CELL_FEATURE_BANDS]
        except KeyError as exc:
            raise ValueError(
                f"cell feature table for {date.isoformat()} lacks band {exc}"
            ) from None
        vec = np.array(
            image_feats + [wx.air_temp_f, wx.vpd_kpa, wx.wind_mph], dtype=np.float64
        )
        if not np.all(np.isfinite(vec)):
            dropped += 1
            continue
        samples.append(
            Sample(
                tree_id=tree_id,
                date=date,
                features=vec,
                swp_bars=float(swp),
                stress=label_stress(float(swp)),
            )
        )
    if dropped:
        logger.info("assemble_dataset dropped %d samples with NaN features", dropped)
    if excluded_count:
        logger.info(
            "assemble_dataset omitted %d measurements on excluded dates",
            excluded_count,
        )
    return AssemblyResult(samples=samples, dropped_nan=dropped, excluded=excluded_count)


def samples_to_matrix(
    samples: Sequence[Sample], feature_names: Sequence[str] = FEATURE_NAMES
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack samples into (X, swp, class_index) arrays for model code."""
    idx = [FEATURE_NAMES.index(name) for name in feature_names]
    X = np.array([s.features[idx] for s in samples], dtype=np.float64)
    y = np.array([s.swp_bars for s in samples], dtype=np.float64)
    cls = np.array([s.stress.index for s in samples], dtype=np.int64)
    return X, y, cls


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise FormatError(f"bad ISO date {text!r} in {where}") from None


def _parse_float(text: str, column: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"bad {column} value {text!r} in {where}") from None


def _open_csv(path: str | Path, required: Sequence[str]) -> list[dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"CSV file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise FormatError(f"{path} missing columns {missing}")
        return list(reader)


def load_trees_csv(path: str | Path) -> list[TreeRecord]:
    rows = _open_csv(path, ("tree_id", "block_id", "treatment_bar", "x_m", "y_m"))
    trees = []
    for row in rows:
        trees.append(
            TreeRecord(
                tree_id=row["tree_id"].strip(),
                block_id=row["block_id"].strip(),
                treatment_bar=int(row["treatment_bar"]),
                location=(
                    _parse_float(row["x_m"], "x_m", str(path)),
                    _parse_float(row["y_m"], "y_m", str(path)),
                ),
            )
        )
    return trees


def load_weather_csv(path: str | Path) -> list[WeatherRecord]:
    """Read weather rows; a blank vpd_kpa is computed from temp/humidity."""
    rows = _open_csv(path, ("date", "air_temp_f", "humidity_pct", "wind_mph"))
    records = []
    for row in rows:
        air = _parse_float(row["air_temp_f"], "air_temp_f", str(path))
        rh = _parse_float(row["humidity_pct"], "humidity_pct", str(path))
        vpd_text = (row.get("vpd_kpa") or "").strip()
        vpd = (
            compute_vpd(air, rh)
            if not vpd_text
            else _parse_float(vpd_text, "vpd_kpa", str(path))
        )
        records.append(
            WeatherRecord(
                date=_parse_date(row["date"], str(path)),
                air_temp_f=air,
                humidity_pct=rh,
                wind_mph=_parse_float(row["wind_mph"], "wind_mph", str(path)),
                vpd_kpa=vpd,
            )
        )
    return records


def load_swp_csv(path: str | Path) -> list[tuple[str, dt.date, float]]:
    rows = _open_csv(path, ("tree_id", "date", "swp_bars"))
    return [
        (
            row["tree_id"].strip(),
            _parse_date(row["date"], str(path)),
            _parse_float(row["swp_bars"], "swp_bars", str(path)),
        )
        for row in rows
    ]


def write_dataset_csv(samples: Sequence[Sample], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tree_id", "date", *FEATURE_NAMES, "swp_bars", "stress"])
        for s in samples:
            writer.writerow(
                [
                    s.tree_id,
                    s.date.isoformat(),
                    *[repr(float(v)) for v in s.features],
                    repr(float(s.swp_bars)),
                    s.stress.value,
                ]
            )


def load_dataset_csv(path: str | Path) -> list[Sample]:
    rows = _open_csv(path, ("tree_id", "date", *FEATURE_NAMES, "swp_bars", "stress"))
    samples = []
    for row in rows:
        swp = _parse_float(row["swp_bars"], "swp_bars", str(path))
        stress = StressClass(row["stress"].strip())
        samples.append(
            Sample(
                tree_id=row["tree_id"].strip(),
                date=_parse_date(row["date"], str(path)),
                features=np.array(
                    [
                        _parse_float(row[name], name, str(path))
                        for name in FEATURE_NAMES
                    ]
                ),
                swp_bars=swp,
                stress=stress,
            )
        )
    return samples


def write_cell_features_csv(table: CellFeatureTable, path: str | Path) -> None:
    """Per-cell medians plus a geometry header block, one file per date."""
    geom = table.geometry
    band_names = list(table.medians)
    lines = [
        f"# width {geom.width}",
        f"# height {geom.height}",
        f"# pixel_size_m {geom.pixel_size_m!r}",
        f"# origin_x {geom.origin[0]!r}",
        f"# origin_y {geom.origin[1]!r}",
        f"# cell_size_px {table.grid.cell_size_px}",
        ",".join(["row", "col", *band_names]),
    ]
    for r in range(table.grid.n_rows):
        for k in range(table.grid.n_cols):
            vals = [repr(float(table.medians[b][r, k])) for b in band_names]
            lines.append(",".join([str(r), str(k), *vals]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_cell_features_csv(path: str | Path) -> CellFeatureTable:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"cell features file not found: {path}")
    meta: dict[str, str] = {}
    rows: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" ")
            meta[key] = value.strip()
        elif line.strip():
            rows.append(line)
    required = ("width", "height", "pixel_size_m", "origin_x", "origin_y", "cell_size_px")
    missing = [k for k in required if k not in meta]
    if missing:
        raise FormatError(f"{path} missing geometry header keys {missing}")
    geom = RasterGeometry(
        width=int(meta["width"]),
        height=int(meta["height"]),
        pixel_size_m=float(meta["pixel_size_m"]),
        origin=(float(meta["origin_x"]), float(meta["origin_y"])),
    )
    grid = GridSpec.cover(geom.width, geom.height, int(meta["cell_size_px"]))
    header = rows[0].split(",")
    if header[:2] != ["row", "col"]:
        raise FormatError(f"{path} must start with row,col columns")
    band_names = header[2:]
    medians = {
        name: np.full((grid.n_rows, grid.n_cols), np.nan) for name in band_names
    }
    for line in rows[1:]:
        parts = line.split(",")
        r, k = int(parts[0]), int(parts[1])
        for name, text in zip(band_names, parts[2:]):
            medians[name][r, k] = float(text)
    return CellFeatureTable(geometry=geom, grid=grid, medians=medians)
