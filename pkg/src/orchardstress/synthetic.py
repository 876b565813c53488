"""Deterministic synthetic orchard scenes with planted ground truth.

The generator builds a small rectangular orchard: blocks of trees on a
square cell lattice, five irrigation treatments cycling over blocks.
Each (tree, date) pair carries two latent variables — stress L in
[0, 1], tied to the treatment, and senescence M, independent of stress
— that drive band reflectances, canopy temperature, and through the
planted response function the stem water potential. Because SWP is an
explicit function of the same canonical features the pipeline extracts,
every downstream stage has a closed-form oracle.

All randomness derives from the scenario seed plus fixed purpose tags,
so a config generates byte-identical files on every run, and the raster
path and the feature-table path see identical latent draws.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import (
    DEFAULT_CELL_SIZE_PX,
    DEFAULT_EXCLUDED_DATES,
    FEATURE_NAMES,
    Sample,
    TreeRecord,
    WeatherRecord,
    compute_vpd,
    label_stress,
)
from .forest import derive_seed
from .raster import DEFAULT_PIXEL_SIZE_M, CanopyMask, Raster, save_raster

# Seed purpose tags for the independent generator streams.
_TAG_LAYOUT = 101
_TAG_LATENT = 102
_TAG_SENESCENCE = 103
_TAG_NOISE = 104
_TAG_WEATHER = 105
_TAG_SWP = 106
_TAG_SHADOW = 107

BAND_ORDER = (
    "Blue",
    "Green",
    "Panchromatic",
    "Red",
    "RedEdge",
    "NIR",
    "Thermal",
    "DSM",
)

# Canopy reflectance response: band -> (base, stress slope, senescence
# slope); reflectance = base + a*L + b*M. Stress dims NIR and green and
# brightens red; senescence mainly depresses the red edge.
DEFAULT_CANOPY_OPTICS: Mapping[str, tuple[float, float, float]] = {
    "Blue": (0.040, 0.000, 0.000),
    "Green": (0.100, -0.010, 0.000),
    "Panchromatic": (0.080, 0.020, 0.000),
    "Red": (0.050, 0.025, 0.000),
    "RedEdge": (0.310, 0.020, -0.100),
    "NIR": (0.460, -0.160, 0.000),
}

# Bare-soil reflectance plus thermal/DSM levels between the rows.
DEFAULT_SOIL_VALUES: Mapping[str, float] = {
    "Blue": 0.12,
    "Green": 0.15,
    "Panchromatic": 0.16,
    "Red": 0.20,
    "RedEdge": 0.22,
    "NIR": 0.25,
    "Thermal": 320.0,
    "DSM": 0.0,
}

# Cast shadow: dark in every reflective band (strongly negative excess
# green) but tall in the surface model, the classic false positive a
# height-only mask would admit.
DEFAULT_SHADOW_VALUES: Mapping[str, float] = {
    "Blue": 0.030,
    "Green": 0.020,
    "Panchromatic": 0.020,
    "Red": 0.028,
    "RedEdge": 0.030,
    "NIR": 0.050,
    "Thermal": 305.0,
}

# Flight-day weather is drawn uniformly from the observed field ranges.
WEATHER_RANGES = {
    "air_temp_f": (83.30, 90.80),
    "humidity_pct": (28.7, 58.5),
    "wind_mph": (2.2, 16.0),
}

DEFAULT_DATES = (
    "2017-07-11",
    "2017-07-24",
    "2017-08-22",
    "2018-07-09",
    "2018-07-27",
)


@dataclass(frozen=True)
class PlantedCoefficients:
    """The planted SWP response: affine in the 7 canonical features plus
    one thermal x VPD interaction, evaluated around fixed centers."""

    intercept: float = -1.15
    linear: tuple[float, ...] = (
        -0.17,  # thermal (K)
        5.5,  # ndvi
        2.0,  # ndre
        -8.0,  # psri
        -0.02,  # air_temp_f
        -0.22,  # vpd_kpa
        -0.03,  # wind_mph
    )
    centers: tuple[float, ...] = (300.0, 0.72, 0.17, 0.07, 87.0, 2.8, 8.0)
    thermal_vpd: float = -0.015

    def __post_init__(self) -> None:
        if len(self.linear) != len(FEATURE_NAMES):
            raise ValueError(f"need {len(FEATURE_NAMES)} linear coefficients")
        if len(self.centers) != len(FEATURE_NAMES):
            raise ValueError(f"need {len(FEATURE_NAMES)} centers")
        values = (*self.linear, *self.centers, self.intercept, self.thermal_vpd)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("planted coefficients must be finite")

    def response(self, features: np.ndarray) -> np.ndarray:
        """Noise-free SWP for feature rows in canonical order."""
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        centered = x - np.asarray(self.centers)
        out = self.intercept + centered @ np.asarray(self.linear)
        t = FEATURE_NAMES.index("thermal")
        v = FEATURE_NAMES.index("vpd_kpa")
        out = out + self.thermal_vpd * centered[:, t] * centered[:, v]
        return out if features.ndim == 2 else out[0]

    def additive_component(self, feature: str, values: np.ndarray) -> np.ndarray:
        """The planted per-feature term c * (x - center), interaction aside."""
        i = FEATURE_NAMES.index(feature)
        return self.linear[i] * (np.asarray(values, dtype=np.float64) - self.centers[i])


@dataclass(frozen=True)
class SceneConfig:
    """Everything the generator needs; identical configs give identical bytes."""

    seed: int = 2017
    pixel_size_m: float = DEFAULT_PIXEL_SIZE_M
    cell_size_px: int = DEFAULT_CELL_SIZE_PX
    block_rows: int = 5
    block_cols: int = 5
    trees_per_block: int = 2
    canopy_radius_m: float = 1.6
    radius_jitter_m: float = 0.12
    tree_jitter_m: float = 0.22
    canopy_height_m: float = 4.5
    height_jitter_m: float = 0.4
    shadow_fraction: float = 1.0
    reflectance_noise_std: float = 0.004
    thermal_noise_std: float = 0.5
    dsm_noise_std: float = 0.15
    swp_noise_std: float = 0.3
    dates: tuple[str, ...] = DEFAULT_DATES
    # Latent stress cluster per irrigation treatment, in [0, 1].
    treatment_latent: tuple[float, ...] = (0.04, 0.135, 0.37, 0.76, 0.97)
    date_latent_shift: tuple[float, ...] = (0.0, 0.04, 0.08, -0.02, 0.03)
    tree_effect_std: float = 0.03
    latent_noise_std: float = 0.02
    senescence_mean: float = 0.5
    senescence_std: float = 0.3
    coefficients: PlantedCoefficients = PlantedCoefficients()
    canopy_optics: Mapping[str, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_CANOPY_OPTICS)
    )
    soil_values: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_SOIL_VALUES)
    )
    shadow_values: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_SHADOW_VALUES)
    )
    thermal_canopy_base: float = 296.0
    thermal_latent_slope: float = 16.0
    thermal_airtemp_slope: float = 0.35
    thermal_airtemp_ref_f: float = 83.0
    soil_thermal_airtemp_slope: float = 0.6

    def __post_init__(self) -> None:
        if min(self.block_rows, self.block_cols, self.trees_per_block) < 1:
            raise ValueError("block layout dimensions must be positive")
        if self.cell_size_px < 4 or self.pixel_size_m <= 0:
            raise ValueError("cell/pixel sizing must be positive")
        if not 0.0 <= self.shadow_fraction <= 1.0:
            raise ValueError(f"shadow_fraction {self.shadow_fraction} outside [0, 1]")
        for name in (
            "reflectance_noise_std",
            "thermal_noise_std",
            "dsm_noise_std",
            "swp_noise_std",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if len(self.dates) != len(self.date_latent_shift):
            raise ValueError("need one date_latent_shift per date")
        if not self.dates:
            raise ValueError("at least one date required")
        if any(not 0.0 <= t <= 1.0 for t in self.treatment_latent):
            raise ValueError("treatment latents must lie in [0, 1]")
        # Canopy (with jitter) must stay inside its own cell so discs
        # never overlap a neighbor and never leave the raster.
        half_cell = self.cell_size_px * self.pixel_size_m / 2.0
        reach = self.tree_jitter_m + self.canopy_radius_m + self.radius_jitter_m
        if reach >= half_cell:
            raise ValueError(
                f"canopy reach {reach:.2f} m does not fit the "
                f"{2 * half_cell:.2f} m cell"
            )

    # Trees pack each block as a near-square sub-grid of cells.
    @property
    def block_sub_cols(self) -> int:
        return math.ceil(math.sqrt(self.trees_per_block))

    @property
    def block_sub_rows(self) -> int:
        return math.ceil(self.trees_per_block / self.block_sub_cols)

    @property
    def raster_width(self) -> int:
        return self.block_cols * self.block_sub_cols * self.cell_size_px

    @property
    def raster_height(self) -> int:
        return self.block_rows * self.block_sub_rows * self.cell_size_px

    @property
    def n_trees(self) -> int:
        return self.block_rows * self.block_cols * self.trees_per_block

    @property
    def n_treatments(self) -> int:
        return len(self.treatment_latent)

    def date_objects(self) -> tuple[dt.date, ...]:
        return tuple(dt.date.fromisoformat(d) for d in self.dates)


@dataclass(frozen=True)
class _TreeGeometry:
    center_m: tuple[float, float]
    radius_m: float
    height_m: float
    stress_offset: float  # per-tree latent shift
    has_shadow: bool


def _layout(config: SceneConfig) -> tuple[list[TreeRecord], list[_TreeGeometry]]:
    """Place trees cell by cell; geometry jitter comes from the layout stream."""
    rng = np.random.default_rng([config.seed, _TAG_LAYOUT])
    shadow_rng = np.random.default_rng([config.seed, _TAG_SHADOW])
    cell_m = config.cell_size_px * config.pixel_size_m
    trees: list[TreeRecord] = []
    geoms: list[_TreeGeometry] = []
    index = 0
    for br in range(config.block_rows):
        for bc in range(config.block_cols):
            block_index = br * config.block_cols + bc
            treatment = block_index % config.n_treatments
            for t in range(config.trees_per_block):
                sr, sc = divmod(t, config.block_sub_cols)
                cell_row = br * config.block_sub_rows + sr
                cell_col = bc * config.block_sub_cols + sc
                jx, jy = rng.uniform(-config.tree_jitter_m, config.tree_jitter_m, 2)
                cx = float((cell_col + 0.5) * cell_m + jx)
                cy = float((cell_row + 0.5) * cell_m + jy)
                radius = float(
                    config.canopy_radius_m
                    + rng.uniform(-config.radius_jitter_m, config.radius_jitter_m)
                )
                height = float(
                    config.canopy_height_m
                    + rng.uniform(-config.height_jitter_m, config.height_jitter_m)
                )
                stress_offset = float(rng.normal(0.0, config.tree_effect_std))
                index += 1
                trees.append(
                    TreeRecord(
                        tree_id=f"T{index:03d}",
                        block_id=f"B{block_index + 1:02d}",
                        treatment_bar=treatment,
                        location=(cx, cy),
                    )
                )
                geoms.append(
                    _TreeGeometry(
                        center_m=(cx, cy),
                        radius_m=radius,
                        height_m=height,
                        stress_offset=stress_offset,
                        has_shadow=bool(
                            shadow_rng.uniform() < config.shadow_fraction
                        ),
                    )
                )
    return trees, geoms


def tree_latents(config: SceneConfig, date_index: int) -> tuple[np.ndarray, np.ndarray]:
    """(stress L, senescence M) per tree for one date, both clipped to [0, 1].

    Pure in (config, date_index): the raster renderer and the ground-truth
    generator call this independently and must agree.
    """
    if not 0 <= date_index < len(config.dates):
        raise ValueError(f"date_index {date_index} outside 0..{len(config.dates) - 1}")
    trees, geoms = _layout(config)
    rng_l = np.random.default_rng([config.seed, _TAG_LATENT, date_index])
    rng_m = np.random.default_rng([config.seed, _TAG_SENESCENCE, date_index])
    base = np.array(
        [config.treatment_latent[t.treatment_bar] for t in trees]
    )
    offsets = np.array([g.stress_offset for g in geoms])
    stress = (
        base
        + offsets
        + config.date_latent_shift[date_index]
        + rng_l.normal(0.0, config.latent_noise_std, len(trees))
    )
    senescence = rng_m.normal(
        config.senescence_mean, config.senescence_std, len(trees)
    )
    return np.clip(stress, 0.0, 1.0), np.clip(senescence, 0.0, 1.0)


def date_weather(config: SceneConfig, date_index: int) -> WeatherRecord:
    """One day's noon weather, uniform over the observed field ranges."""
    rng = np.random.default_rng([config.seed, _TAG_WEATHER, date_index])
    air = round(float(rng.uniform(*WEATHER_RANGES["air_temp_f"])), 2)
    rh = round(float(rng.uniform(*WEATHER_RANGES["humidity_pct"])), 2)
    wind = round(float(rng.uniform(*WEATHER_RANGES["wind_mph"])), 2)
    return WeatherRecord(
        date=config.date_objects()[date_index],
        air_temp_f=air,
        humidity_pct=rh,
        wind_mph=wind,
        vpd_kpa=compute_vpd(air, rh),
    )


def _canopy_thermal(config: SceneConfig, stress: np.ndarray, air_temp_f: float) -> np.ndarray:
    return (
        config.thermal_canopy_base
        + config.thermal_latent_slope * stress
        + config.thermal_airtemp_slope * (air_temp_f - config.thermal_airtemp_ref_f)
    )


def intended_features(config: SceneConfig, date_index: int) -> np.ndarray:
    """Noise-free canonical feature rows (n_trees, 7) for one date.

    These are the values a perfect extraction would recover from the
    rendered scene; the planted SWP function is defined over them.
    """
    stress, senescence = tree_latents(config, date_index)
    wx = date_weather(config, date_index)

    def reflectance(band: str) -> np.ndarray:
        base, a, b = config.canopy_optics[band]
        return base + a * stress + b * senescence

    red = reflectance("Red")
    blue = reflectance("Blue")
    nir = reflectance("NIR")
    red_edge = reflectance("RedEdge")
    thermal = _canopy_thermal(config, stress, wx.air_temp_f)
    ndvi = (nir - red) / (nir + red)
    ndre = (nir - red_edge) / (nir + red_edge)
    psri = (red - blue) / red_edge
    n = len(stress)
    out = np.column_stack(
        [
            thermal,
            ndvi,
            ndre,
            psri,
            np.full(n, wx.air_temp_f),
            np.full(n, wx.vpd_kpa),
            np.full(n, wx.wind_mph),
        ]
    )
    return out


@dataclass
class SceneResult:
    """generate_scene output: the contracted triple plus test-only extras."""

    raster: Raster
    truth_mask: CanopyMask
    trees: list[TreeRecord]
    shadow_mask: np.ndarray  # (H, W) bool, rendered shadow pixels
    intended: np.ndarray  # (n_trees, 7) noise-free features


def generate_scene(config: SceneConfig, date_index: int = 0) -> SceneResult:
    """Render one flight date: all 8 bands, ground-truth mask, tree table."""
    trees, geoms = _layout(config)
    stress, senescence = tree_latents(config, date_index)
    wx = date_weather(config, date_index)
    width, height = config.raster_width, config.raster_height
    px = config.pixel_size_m

    bands: dict[str, np.ndarray] = {}
    for band in BAND_ORDER:
        if band == "Thermal":
            soil = config.soil_values["Thermal"] + config.soil_thermal_airtemp_slope * (
                wx.air_temp_f - config.thermal_airtemp_ref_f
            )
        else:
            soil = config.soil_values[band]
        bands[band] = np.full((height, width), soil, dtype=np.float64)

    # Pixel-center coordinates in meters.
    xs = (np.arange(width) + 0.5) * px
    ys = (np.arange(height) + 0.5) * px

    truth = np.zeros((height, width), dtype=bool)
    shadow = np.zeros((height, width), dtype=bool)
    canopy_thermal = _canopy_thermal(config, stress, wx.air_temp_f)

    def disc_box(cx: float, cy: float, r: float) -> tuple[slice, slice, np.ndarray]:
        c0 = max(0, int((cx - r) / px) - 1)
        c1 = min(width, int((cx + r) / px) + 2)
        r0 = max(0, int((cy - r) / px) - 1)
        r1 = min(height, int((cy + r) / px) + 2)
        rows, cols = slice(r0, r1), slice(c0, c1)
        dx = xs[cols] - cx
        dy = ys[rows] - cy
        inside = dy[:, None] ** 2 + dx[None, :] ** 2 <= r * r
        return rows, cols, inside

    for i, geom in enumerate(geoms):
        cx, cy = geom.center_m
        rows, cols, inside = disc_box(cx, cy, geom.radius_m)
        truth[rows, cols] |= inside
        for band in BAND_ORDER:
            if band == "Thermal":
                value = canopy_thermal[i]
            elif band == "DSM":
                value = geom.height_m
            else:
                base, a, b = config.canopy_optics[band]
                value = base + a * stress[i] + b * senescence[i]
            np.copyto(bands[band][rows, cols], value, where=inside)

    # Shadow lobes sit diagonally off each casting tree and never cover
    # canopy; they get the dark reflectances but the caster's height.
    for i, geom in enumerate(geoms):
        if not geom.has_shadow:
            continue
        cx, cy = geom.center_m
        off = 0.9 * geom.radius_m
        rows, cols, inside = disc_box(cx + off, cy + off, geom.radius_m)
        lobe = inside & ~truth[rows, cols]
        shadow[rows, cols] |= lobe
        for band in BAND_ORDER:
            value = geom.height_m if band == "DSM" else config.shadow_values[band]
            np.copyto(bands[band][rows, cols], value, where=lobe)

    rng = np.random.default_rng([config.seed, _TAG_NOISE, date_index])
    for band in BAND_ORDER:
        if band == "Thermal":
            sigma = config.thermal_noise_std
        elif band == "DSM":
            sigma = config.dsm_noise_std
        else:
            sigma = config.reflectance_noise_std
        if sigma > 0:
            bands[band] += rng.normal(0.0, sigma, (height, width))

    raster = Raster(
        width=width,
        height=height,
        pixel_size_m=px,
        origin=(0.0, 0.0),
        bands={name: grid.astype(np.float32) for name, grid in bands.items()},
    )
    return SceneResult(
        raster=raster,
        truth_mask=CanopyMask(width=width, height=height, flags=truth),
        trees=trees,
        shadow_mask=shadow,
        intended=intended_features(config, date_index),
    )


def generate_ground_truth(
    config: SceneConfig,
) -> list[tuple[str, dt.date, float]]:
    """SWP rows for every (tree, date): planted response plus noise.

    Noise is drawn per date in tree order from the SWP stream; values
    are clamped to the plausible [-8, 0] bar range afterwards.
    """
    trees, _ = _layout(config)
    dates = config.date_objects()
    rows: list[tuple[str, dt.date, float]] = []
    for d in range(len(dates)):
        clean = config.coefficients.response(intended_features(config, d))
        rng = np.random.default_rng([config.seed, _TAG_SWP, d])
        noisy = clean + rng.normal(0.0, config.swp_noise_std, len(trees))
        swp = np.clip(noisy, -8.0, 0.0)
        rows.extend(
            (tree.tree_id, dates[d], float(swp[i])) for i, tree in enumerate(trees)
        )
    return rows


def intended_samples(
    config: SceneConfig,
    excluded_dates: Sequence[dt.date] = DEFAULT_EXCLUDED_DATES,
) -> list[Sample]:
    """Assembled samples straight from the noise-free feature table.

    Bypasses rendering and extraction: features are the intended values
    and SWP comes from generate_ground_truth, so this is the oracle
    dataset downstream model checks train on.
    """
    trees, _ = _layout(config)
    dates = config.date_objects()
    swp_by_key = {
        (tree_id, date): swp for tree_id, date, swp in generate_ground_truth(config)
    }
    excluded = set(excluded_dates)
    samples: list[Sample] = []
    for d, date in enumerate(dates):
        if date in excluded:
            continue
        table = intended_features(config, d)
        for i, tree in enumerate(trees):
            swp = swp_by_key[(tree.tree_id, date)]
            samples.append(
                Sample(
                    tree_id=tree.tree_id,
                    date=date,
                    features=table[i],
                    swp_bars=swp,
                    stress=label_stress(swp),
                )
            )
    return samples


def scenario_weather(config: SceneConfig) -> list[WeatherRecord]:
    return [date_weather(config, d) for d in range(len(config.dates))]


def config_to_manifest(config: SceneConfig) -> dict:
    """JSON-ready record of every planted parameter plus derived geometry."""
    manifest = dataclasses.asdict(config)
    manifest["coefficients"] = dataclasses.asdict(config.coefficients)
    manifest["derived"] = {
        "raster_width": config.raster_width,
        "raster_height": config.raster_height,
        "n_trees": config.n_trees,
        "block_sub_rows": config.block_sub_rows,
        "block_sub_cols": config.block_sub_cols,
        "band_order": list(BAND_ORDER),
        "feature_names": list(FEATURE_NAMES),
    }
    return manifest


def generate_scenario(config: SceneConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write the full multi-date scenario to disk in pipeline formats.

    Produces rasters/<date>.orr (+ payload), a truth_mask.orr shared by
    all dates (geometry is static), trees.csv / weather.csv / swp.csv,
    and manifest.json recording every planted parameter.
    """
    from .features import write_dataset_csv  # noqa: F401  (namespace kin)

    out = Path(out_dir)
    raster_dir = out / "rasters"
    raster_dir.mkdir(parents=True, exist_ok=True)

    paths: dict[str, Path] = {}
    trees: list[TreeRecord] = []
    for d, date in enumerate(config.date_objects()):
        scene = generate_scene(config, d)
        trees = scene.trees
        raster_path = raster_dir / f"{date.isoformat()}.orr"
        save_raster(scene.raster, raster_path)
        paths[f"raster_{date.isoformat()}"] = raster_path
        if d == 0:
            mask_path = out / "truth_mask.orr"
            save_raster(
                scene.truth_mask.to_raster(config.pixel_size_m, (0.0, 0.0)),
                mask_path,
            )
            paths["truth_mask"] = mask_path

    trees_path = out / "trees.csv"
    lines = ["tree_id,block_id,treatment_bar,x_m,y_m"]
    for tree in trees:
        x, y = tree.location
        lines.append(
            f"{tree.tree_id},{tree.block_id},{tree.treatment_bar},{x!r},{y!r}"
        )
    trees_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["trees"] = trees_path

    weather_path = out / "weather.csv"
    lines = ["date,air_temp_f,humidity_pct,wind_mph,vpd_kpa"]
    for wx in scenario_weather(config):
        lines.append(
            f"{wx.date.isoformat()},{wx.air_temp_f!r},{wx.humidity_pct!r},"
            f"{wx.wind_mph!r},{wx.vpd_kpa!r}"
        )
    weather_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["weather"] = weather_path

    swp_path = out / "swp.csv"
    lines = ["tree_id,date,swp_bars"]
    for tree_id, date, swp in generate_ground_truth(config):
        lines.append(f"{tree_id},{date.isoformat()},{swp!r}")
    swp_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["swp"] = swp_path

    manifest_path = out / "manifest.json"
    manifest_path.write_text(
        json.dumps(config_to_manifest(config), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    paths["manifest"] = manifest_path
    return paths
