"""Orchard water-stress analytics: rasters to stem-water-potential models."""

from .errors import DegenerateDataError, FormatError
from .features import (
    CELL_FEATURE_BANDS,
    DEFAULT_CELL_SIZE_PX,
    DEFAULT_EXCLUDED_DATES,
    FEATURE_NAMES,
    STRESS_CLASS_NAMES,
    AssemblyResult,
    CellFeatureTable,
    GridSpec,
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
    stress_from_index,
    write_cell_features_csv,
    write_dataset_csv,
)
from .forest import (
    DecisionTree,
    Forest,
    ForestParams,
    PdpCurve,
    Task,
    derive_seed,
    impurity_importance,
    load_forest,
    partial_dependence,
    predict,
    predict_proba,
    save_forest,
    train_forest,
)
from .evaluation import (
    EvalReport,
    ExperimentConfig,
    Variant,
    binary_auc,
    classification_metrics,
    confusion_to_metrics,
    features_for_variant,
    kfold_indices,
    regression_metrics,
    report_summary,
    report_to_csv,
    run_experiment,
    split_dataset,
    train_final_model,
)
from .indices import IndexName, compute_index, required_bands
from .raster import (
    BandName,
    CanopyMask,
    Raster,
    RasterGeometry,
    apply_mask,
    band_histogram,
    equal_width_histogram,
    load_raster,
    rasters_equal,
    save_raster,
)
from .segmentation import (
    ThresholdReport,
    build_canopy_mask,
    compute_nexg,
    otsu_threshold,
    threshold_reports_to_text,
    write_threshold_reports,
)
from .synthetic import (
    PlantedCoefficients,
    SceneConfig,
    SceneResult,
    generate_ground_truth,
    generate_scenario,
    generate_scene,
    intended_features,
    intended_samples,
)

__version__ = "0.1.0"
