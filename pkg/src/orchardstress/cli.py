"""File-driven command line for the orchard stress pipeline.

One subcommand per stage (`synth`, `segment`, `indices`, `extract`,
`dataset`, `train`, `eval`, `pdp`, `predict-map`) plus `run`, which
composes the stages through the same intermediate files the stage
commands read and write — so a one-shot run and a stage-by-stage run
produce byte-identical output trees.

Settings come from a flat `key = value` config file; any same-named
command flag overrides the file. Every random decision derives from the
single `seed` value. Failures print one machine-readable line to stderr
(`ERROR <class>: <message>`) and exit nonzero: 3 missing file, 4 format,
5 degenerate data, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateDataError, FormatError
from .evaluation import (
    ExperimentConfig,
    Variant,
    features_for_variant,
    report_summary,
    report_to_csv,
    run_experiment,
    train_final_model,
)
from .features import (
    CELL_FEATURE_BANDS,
    DEFAULT_CELL_SIZE_PX,
    DEFAULT_EXCLUDED_DATES,
    FEATURE_NAMES,
    CellFeatureTable,
    GridSpec,
    assemble_dataset,
    cell_median_features,
    load_cell_features_csv,
    load_dataset_csv,
    load_swp_csv,
    load_trees_csv,
    load_weather_csv,
    write_cell_features_csv,
    write_dataset_csv,
)
from .forest import (
    Forest,
    ForestParams,
    Task,
    impurity_importance,
    load_forest,
    partial_dependence,
    predict,
    save_forest,
)
from .indices import IndexName, compute_index
from .raster import CanopyMask, Raster, apply_mask, load_raster, save_raster
from .segmentation import (
    OTSU_DEFAULT_BINS,
    build_canopy_mask,
    compute_nexg,
    write_threshold_reports,
)
from .synthetic import SceneConfig, generate_scenario

logger = logging.getLogger(__name__)

# Every key a config file may set; unknown keys are format errors so
# typos fail loudly instead of silently using defaults.
CONFIG_KEYS = frozenset(
    {
        "rasters_dir",
        "trees_csv",
        "weather_csv",
        "swp_csv",
        "out",
        "task",
        "variant",
        "seed",
        "trees",
        "reps",
        "cell_px",
        "excluded_dates",
        "max_depth",
        "min_leaf",
        "mtry",
        "bootstrap",
        "cv_folds",
        "val_frac",
        "test_frac",
        "bins",
        "grid_points",
    }
)


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat `key = value` lines; blank lines and # comments ignored.

    Relative path values resolve against the config file's directory,
    so a generated scenario stays runnable after being moved.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise FormatError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise FormatError(f"{path}:{lineno}: duplicate config key {key!r}")
        values[key] = value.strip()
    base = path.parent
    for key in ("rasters_dir", "trees_csv", "weather_csv", "swp_csv", "out"):
        if key in values and values[key]:
            values[key] = str((base / values[key]).resolve())
    return values


def parse_variant(token: str) -> tuple[Variant, str | None]:
    if token == "full":
        return Variant.FULL, None
    if token == "norededge":
        return Variant.NO_REDEDGE, None
    if token.startswith("single-date:"):
        date_text = token[len("single-date:") :]
        try:
            dt.date.fromisoformat(date_text)
        except ValueError:
            raise FormatError(f"bad date in variant token {token!r}") from None
        return Variant.SINGLE_DATE, date_text
    raise FormatError(
        f"variant must be full, norededge, or single-date:<ISO date>, got {token!r}"
    )


def parse_excluded_dates(token: str) -> tuple[dt.date, ...]:
    if token.strip().lower() == "none":
        return ()
    out = []
    for piece in token.split(","):
        try:
            out.append(dt.date.fromisoformat(piece.strip()))
        except ValueError:
            raise FormatError(f"bad excluded date {piece.strip()!r}") from None
    return tuple(out)


@dataclasses.dataclass
class RunConfig:
    """Resolved settings for `run` (and defaults for the stage commands)."""

    rasters_dir: Path
    trees_csv: Path
    weather_csv: Path
    swp_csv: Path
    out: Path
    task: Task = Task.REGRESSION
    variant: Variant = Variant.FULL
    single_date: str | None = None
    seed: int = 0
    trees: int = 500
    reps: int = 10
    cell_px: int = DEFAULT_CELL_SIZE_PX
    excluded_dates: tuple[dt.date, ...] = DEFAULT_EXCLUDED_DATES
    max_depth: int | None = None
    min_leaf: int | None = None
    mtry: int | None = None
    bootstrap: bool = True
    cv_folds: int = 10
    val_frac: float = 0.1
    test_frac: float = 0.1
    bins: int = OTSU_DEFAULT_BINS
    grid_points: int = 20

    def forest_params(self) -> ForestParams:
        return ForestParams(
            n_trees=self.trees,
            max_depth=self.max_depth,
            min_leaf=self.min_leaf,
            mtry=self.mtry,
            bootstrap=self.bootstrap,
        )

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            task=self.task,
            variant=self.variant,
            params=self.forest_params(),
            master_seed=self.seed,
            n_reps=self.reps,
            val_frac=self.val_frac,
            test_frac=self.test_frac,
            cv_folds=self.cv_folds,
            single_date=self.single_date,
        )


def _resolve(args: argparse.Namespace, cfg: dict[str, str], key: str, default, cast):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag if cast is None else flag
    if key in cfg:
        try:
            return cast(cfg[key]) if cast else cfg[key]
        except ValueError:
            raise FormatError(f"bad config value for {key}: {cfg[key]!r}") from None
    return default


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(text)


def _parse_optional_int(text: str) -> int | None:
    return None if text.lower() == "none" else int(text)


def build_run_config(args: argparse.Namespace) -> RunConfig:
    cfg = parse_config_file(args.config) if args.config else {}

    def need_path(key: str) -> Path:
        value = _resolve(args, cfg, key, None, None)
        if value is None:
            raise FormatError(f"missing required setting {key!r}")
        return Path(value)

    variant_token = _resolve(args, cfg, "variant", "full", None)
    variant, single_date = parse_variant(variant_token)
    task_token = _resolve(args, cfg, "task", "regression", None)
    try:
        task = Task(task_token)
    except ValueError:
        raise FormatError(f"task must be regression or classification, got {task_token!r}") from None
    excluded_token = _resolve(args, cfg, "excluded_dates", None, None)
    excluded = (
        DEFAULT_EXCLUDED_DATES
        if excluded_token is None
        else parse_excluded_dates(excluded_token)
    )
    config = RunConfig(
        rasters_dir=need_path("rasters_dir"),
        trees_csv=need_path("trees_csv"),
        weather_csv=need_path("weather_csv"),
        swp_csv=need_path("swp_csv"),
        out=need_path("out"),
        task=task,
        variant=variant,
        single_date=single_date,
        seed=_resolve(args, cfg, "seed", 0, int),
        trees=_resolve(args, cfg, "trees", 500, int),
        reps=_resolve(args, cfg, "reps", 10, int),
        cell_px=_resolve(args, cfg, "cell_px", DEFAULT_CELL_SIZE_PX, int),
        excluded_dates=excluded,
        max_depth=_resolve(args, cfg, "max_depth", None, _parse_optional_int),
        min_leaf=_resolve(args, cfg, "min_leaf", None, _parse_optional_int),
        mtry=_resolve(args, cfg, "mtry", None, _parse_optional_int),
        bootstrap=_resolve(args, cfg, "bootstrap", True, _parse_bool),
        cv_folds=_resolve(args, cfg, "cv_folds", 10, int),
        val_frac=_resolve(args, cfg, "val_frac", 0.1, float),
        test_frac=_resolve(args, cfg, "test_frac", 0.1, float),
        bins=_resolve(args, cfg, "bins", OTSU_DEFAULT_BINS, int),
        grid_points=_resolve(args, cfg, "grid_points", 20, int),
    )
    for path in (config.trees_csv, config.weather_csv, config.swp_csv):
        if not path.is_file():
            raise FileNotFoundError(f"input file not found: {path}")
    if not config.rasters_dir.is_dir():
        raise FileNotFoundError(f"raster directory not found: {config.rasters_dir}")
    return config


def pipeline_dates(config: RunConfig) -> list[dt.date]:
    """Flight dates the pipeline processes: weather rows minus exclusions."""
    weather = load_weather_csv(config.weather_csv)
    dates = [w.date for w in weather if w.date not in config.excluded_dates]
    if not dates:
        raise DegenerateDataError("every flight date is excluded")
    for date in dates:
        raster = config.rasters_dir / f"{date.isoformat()}.orr"
        if not raster.is_file():
            raise FileNotFoundError(f"raster not found for {date.isoformat()}: {raster}")
    return dates


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_segment(config: RunConfig, dates: Sequence[dt.date]) -> None:
    mask_dir = config.out / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    for date in dates:
        raster = load_raster(config.rasters_dir / f"{date.isoformat()}.orr")
        mask, dsm_report, nexg_report = build_canopy_mask(raster, config.bins)
        save_raster(
            mask.to_raster(raster.pixel_size_m, raster.origin),
            mask_dir / f"{date.isoformat()}_mask.orr",
        )
        write_threshold_reports(
            [dsm_report, nexg_report],
            mask_dir / f"{date.isoformat()}_thresholds.txt",
        )
        logger.info("segment %s: %d canopy pixels", date, int(mask.flags.sum()))


def stage_indices(config: RunConfig, dates: Sequence[dt.date]) -> None:
    index_dir = config.out / "indices"
    index_dir.mkdir(parents=True, exist_ok=True)
    for date in dates:
        raster = load_raster(config.rasters_dir / f"{date.isoformat()}.orr")
        bands = {"NExG": compute_nexg(raster).band("NExG")}
        for index in IndexName:
            bands[index.value] = compute_index(raster, index).band(index.value)
        save_raster(
            Raster(
                width=raster.width,
                height=raster.height,
                pixel_size_m=raster.pixel_size_m,
                origin=raster.origin,
                bands=bands,
            ),
            index_dir / f"{date.isoformat()}_indices.orr",
        )


def stage_extract(config: RunConfig, dates: Sequence[dt.date]) -> None:
    feature_dir = config.out / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    for date in dates:
        iso = date.isoformat()
        raster = load_raster(config.rasters_dir / f"{iso}.orr")
        mask = CanopyMask.from_raster(
            load_raster(config.out / "masks" / f"{iso}_mask.orr")
        )
        index_raster = load_raster(config.out / "indices" / f"{iso}_indices.orr")
        stack = Raster(
            width=raster.width,
            height=raster.height,
            pixel_size_m=raster.pixel_size_m,
            origin=raster.origin,
            bands={
                "Thermal": raster.band("Thermal"),
                "NDVI": index_raster.band("NDVI"),
                "NDRE": index_raster.band("NDRE"),
                "PSRI": index_raster.band("PSRI"),
            },
        )
        masked = apply_mask(stack, mask)
        grid = GridSpec.cover(raster.width, raster.height, config.cell_px)
        table = CellFeatureTable(
            geometry=masked.geometry,
            grid=grid,
            medians=cell_median_features(masked, grid),
        )
        write_cell_features_csv(table, feature_dir / f"{iso}_cells.csv")


def stage_dataset(config: RunConfig, dates: Sequence[dt.date]) -> None:
    feature_dir = config.out / "features"
    tables = {
        date: load_cell_features_csv(feature_dir / f"{date.isoformat()}_cells.csv")
        for date in dates
    }
    result = assemble_dataset(
        tables,
        load_trees_csv(config.trees_csv),
        load_weather_csv(config.weather_csv),
        load_swp_csv(config.swp_csv),
        excluded_dates=config.excluded_dates,
    )
    if not result.samples:
        raise DegenerateDataError("dataset assembly produced no samples")
    write_dataset_csv(result.samples, config.out / "dataset.csv")
    logger.info(
        "dataset: %d samples (%d dropped NaN, %d excluded)",
        len(result.samples),
        result.dropped_nan,
        result.excluded,
    )


def stage_eval(config: RunConfig) -> None:
    samples = load_dataset_csv(config.out / "dataset.csv")
    report = run_experiment(samples, config.experiment())
    reports_dir = config.out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    report_to_csv(report, reports_dir / "eval.csv")
    (reports_dir / "summary.txt").write_text(
        report_summary(report), encoding="utf-8"
    )


def stage_train(config: RunConfig) -> Forest:
    samples = load_dataset_csv(config.out / "dataset.csv")
    forest = train_final_model(samples, config.experiment())
    models_dir = config.out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    save_forest(forest, models_dir / "model.forest")
    importance = impurity_importance(forest)
    reports_dir = config.out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    lines = ["feature,importance"]
    lines += [
        f"{name},{float(value)!r}"
        for name, value in zip(forest.feature_names, importance)
    ]
    (reports_dir / "importance.csv").write_text(
        "\n".join(lines) + "\n", encoding="utf-8"
    )
    return forest


def stage_pdp(config: RunConfig, forest: Forest | None = None) -> None:
    if forest is None:
        forest = load_forest(config.out / "models" / "model.forest")
    samples = load_dataset_csv(config.out / "dataset.csv")
    from .features import samples_to_matrix

    X, _, _ = samples_to_matrix(samples, forest.feature_names)
    pdp_dir = config.out / "pdp"
    pdp_dir.mkdir(parents=True, exist_ok=True)
    for name in forest.feature_names:
        curve = partial_dependence(forest, X, name, config.grid_points)
        if forest.task is Task.REGRESSION:
            lines = ["grid_value,mean_prediction"]
            lines += [
                f"{float(g)!r},{float(v)!r}"
                for g, v in zip(curve.grid, curve.values)
            ]
        else:
            from .features import STRESS_CLASS_NAMES

            lines = ["grid_value," + ",".join(f"p_{c}" for c in STRESS_CLASS_NAMES)]
            lines += [
                f"{float(g)!r}," + ",".join(repr(float(p)) for p in row)
                for g, row in zip(curve.grid, curve.values)
            ]
        (pdp_dir / f"{name}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def stage_predict_map(
    config: RunConfig, dates: Sequence[dt.date], forest: Forest | None = None
) -> None:
    """Per-cell SWP prediction over the whole grid, one map per date."""
    if forest is None:
        forest = load_forest(config.out / "models" / "model.forest")
    if forest.task is not Task.REGRESSION:
        raise DegenerateDataError("prediction maps need a regression model")
    weather = {w.date: w for w in load_weather_csv(config.weather_csv)}
    maps_dir = config.out / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    if config.variant is Variant.SINGLE_DATE:
        dates = [dt.date.fromisoformat(config.single_date)]
    for date in dates:
        iso = date.isoformat()
        table = load_cell_features_csv(config.out / "features" / f"{iso}_cells.csv")
        wx = weather.get(date)
        if wx is None:
            raise FormatError(f"no weather row for {iso}")
        grid = table.grid
        n_cells = grid.n_rows * grid.n_cols
        canonical = np.full((n_cells, len(FEATURE_NAMES)), np.nan)
        for j, band in enumerate(CELL_FEATURE_BANDS):
            canonical[:, j] = table.medians[band].reshape(-1)
        canonical[:, FEATURE_NAMES.index("air_temp_f")] = wx.air_temp_f
        canonical[:, FEATURE_NAMES.index("vpd_kpa")] = wx.vpd_kpa
        canonical[:, FEATURE_NAMES.index("wind_mph")] = wx.wind_mph
        cols = [FEATURE_NAMES.index(name) for name in forest.feature_names]
        X = canonical[:, cols]
        valid = np.all(np.isfinite(X), axis=1)
        values = np.full(n_cells, np.nan)
        if valid.any():
            values[valid] = predict(forest, X[valid])
        swp_grid = values.reshape(grid.n_rows, grid.n_cols).astype(np.float32)

        lines = ["row,col,swp_bars"]
        for r in range(grid.n_rows):
            for c in range(grid.n_cols):
                lines.append(f"{r},{c},{float(swp_grid[r, c])!r}")
        (maps_dir / f"{iso}_swp.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )

        cell_size_m = table.geometry.pixel_size_m * grid.cell_size_px
        save_raster(
            Raster(
                width=grid.n_cols,
                height=grid.n_rows,
                pixel_size_m=cell_size_m,
                origin=table.geometry.origin,
                bands={"SWP": swp_grid},
            ),
            maps_dir / f"{iso}_swp.orr",
        )


def run_pipeline(config: RunConfig) -> None:
    """segment -> indices -> extract -> dataset -> eval -> train -> pdp [-> maps]."""
    dates = pipeline_dates(config)
    # Parse every input table up front so bad inputs fail before any
    # stage writes a file.
    load_trees_csv(config.trees_csv)
    load_swp_csv(config.swp_csv)
    config.out.mkdir(parents=True, exist_ok=True)
    stage_segment(config, dates)
    stage_indices(config, dates)
    stage_extract(config, dates)
    stage_dataset(config, dates)
    stage_eval(config)
    forest = stage_train(config)
    stage_pdp(config, forest)
    if config.task is Task.REGRESSION:
        stage_predict_map(config, dates, forest)


# ---------------------------------------------------------------------------
# Command wiring
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value settings file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="master seed for all randomness")
    parser.add_argument("--variant", help="full | norededge | single-date:<ISO date>")
    parser.add_argument("--task", help="regression | classification")
    parser.add_argument("--trees", type=int, help="number of trees per forest")
    parser.add_argument("--reps", type=int, help="number of split repetitions")
    parser.add_argument("--cell-px", dest="cell_px", type=int, help="grid cell size in pixels")
    parser.add_argument("--rasters-dir", dest="rasters_dir", help="directory of <date>.orr rasters")
    parser.add_argument("--trees-csv", dest="trees_csv", help="tree table CSV")
    parser.add_argument("--weather-csv", dest="weather_csv", help="weather table CSV")
    parser.add_argument("--swp-csv", dest="swp_csv", help="SWP measurements CSV")
    parser.add_argument("--excluded-dates", dest="excluded_dates", help="comma list of ISO dates, or 'none'")
    parser.add_argument("--cv-folds", dest="cv_folds", type=int, help="cross-validation folds (0 to skip)")
    parser.add_argument("--bins", type=int, help="histogram bins for thresholding")
    parser.add_argument("--grid-points", dest="grid_points", type=int, help="partial dependence grid size")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orchardstress",
        description="UAV raster to stem-water-potential pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic scenario")
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--cell-px", dest="cell_px", type=int, default=None)

    for name, help_text in [
        ("segment", "threshold canopy masks per date"),
        ("indices", "vegetation index rasters per date"),
        ("extract", "per-cell median features per date"),
        ("dataset", "assemble the feature/SWP dataset"),
        ("eval", "repeated-split and cross-validated evaluation"),
        ("train", "train and save the final model + importance"),
        ("pdp", "partial dependence curves for the saved model"),
        ("predict-map", "per-cell SWP maps from the saved model"),
        ("run", "full pipeline in one shot"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    return parser


def _dispatch(args: argparse.Namespace) -> None:
    if args.command == "synth":
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.cell_px is not None:
            overrides["cell_size_px"] = args.cell_px
        config = dataclasses.replace(SceneConfig(), **overrides)
        out = Path(args.out)
        generate_scenario(config, out)
        run_cfg = [
            "# pipeline settings for this synthetic scenario",
            "rasters_dir = rasters",
            "trees_csv = trees.csv",
            "weather_csv = weather.csv",
            "swp_csv = swp.csv",
            f"seed = {config.seed}",
            f"cell_px = {config.cell_size_px}",
            "task = regression",
            "variant = full",
        ]
        (out / "run.cfg").write_text("\n".join(run_cfg) + "\n", encoding="utf-8")
        logger.info("scenario written to %s", out)
        return

    config = build_run_config(args)
    if args.command == "run":
        run_pipeline(config)
        return
    dates = pipeline_dates(config)
    config.out.mkdir(parents=True, exist_ok=True)
    if args.command == "segment":
        stage_segment(config, dates)
    elif args.command == "indices":
        stage_indices(config, dates)
    elif args.command == "extract":
        stage_extract(config, dates)
    elif args.command == "dataset":
        stage_dataset(config, dates)
    elif args.command == "eval":
        stage_eval(config)
    elif args.command == "train":
        stage_train(config)
    elif args.command == "pdp":
        stage_pdp(config)
    elif args.command == "predict-map":
        stage_predict_map(config, dates)
    else:  # pragma: no cover - argparse rejects unknown commands
        raise FormatError(f"unknown command {args.command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        _dispatch(args)
    except FileNotFoundError as exc:
        print(f"ERROR missing-file: {exc}", file=sys.stderr)
        return 3
    except FormatError as exc:
        print(f"ERROR format: {exc}", file=sys.stderr)
        return 4
    except DegenerateDataError as exc:
        print(f"ERROR degenerate-data: {exc}", file=sys.stderr)
        return 5
    except ValueError as exc:
        print(f"ERROR error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
