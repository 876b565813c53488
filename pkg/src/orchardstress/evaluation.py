"""Dataset splitting, metrics, and repeated train/evaluate experiments.

Every random choice an experiment makes is derived from one master seed
plus a fixed purpose tag and (where applicable) a repetition index, so
reports are reproducible end to end and adding repetitions never
perturbs earlier ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateDataError
from .features import FEATURE_NAMES, STRESS_CLASS_NAMES, Sample, samples_to_matrix
from .forest import (
    Forest,
    ForestParams,
    Task,
    derive_seed,
    predict,
    predict_proba,
    train_forest,
)

logger = logging.getLogger(__name__)

# Purpose tags folded into derived seeds. Distinct tags keep the split
# permutation, tree growth, fold shuffle, and final refit streams
# independent even under a shared master seed.
REP_SPLIT = 1
REP_TRAIN = 2
CV_SHUFFLE = 3
CV_TRAIN = 4
FINAL_MODEL = 5

PROBABILITY_TOL = 1e-9


class Variant(str, Enum):
    """Feature subsets for the ablation comparisons."""

    FULL = "Full"
    NO_REDEDGE = "NoRedEdge"
    SINGLE_DATE = "SingleDate"


_VARIANT_FEATURES = {
    Variant.FULL: FEATURE_NAMES,
    Variant.NO_REDEDGE: tuple(
        n for n in FEATURE_NAMES if n not in ("ndre", "psri")
    ),
    # Within one flight the weather columns are constant, so only the
    # image features carry signal.
    Variant.SINGLE_DATE: ("thermal", "ndvi", "ndre", "psri"),
}


def features_for_variant(variant: Variant) -> tuple[str, ...]:
    return _VARIANT_FEATURES[variant]


def split_dataset(
    n: int, val_frac: float, test_frac: float, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffle 0..n-1 into (train, val, test) index arrays.

    Validation and test sizes are round(n * frac); the remainder trains.
    """
    if n < 1:
        raise DegenerateDataError(f"cannot split {n} samples")
    if val_frac < 0 or test_frac < 0 or val_frac + test_frac >= 1:
        raise ValueError(
            f"fractions must be non-negative and sum below 1, "
            f"got val={val_frac} test={test_frac}"
        )
    n_val = round(n * val_frac)
    n_test = round(n * test_frac)
    n_train = n - n_val - n_test
    if n_train < 1:
        raise DegenerateDataError(
            f"split of {n} leaves no training samples (val={n_val}, test={n_test})"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return (
        perm[:n_train],
        perm[n_train : n_train + n_val],
        perm[n_train + n_val :],
    )


def kfold_indices(
    n: int, k: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """K shuffled (train, test) folds; the first n % k folds get the extra item."""
    if not 2 <= k <= n:
        raise DegenerateDataError(f"cannot make {k} folds from {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(perm[start : start + size])
        start += size
    return [
        (np.concatenate(folds[:i] + folds[i + 1 :]), folds[i]) for i in range(k)
    ]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def regression_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> dict[str, float]:
    """R-squared (NaN when the truth is constant), RMSE, and MAE."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or len(y_true) == 0:
        raise ValueError(
            f"need matching non-empty 1-d arrays, got {y_true.shape}, {y_pred.shape}"
        )
    residual = y_true - y_pred
    ss_res = float(np.sum(residual**2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    r2 = float("nan") if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return {
        "r2": r2,
        "rmse": float(np.sqrt(np.mean(residual**2))),
        "mae": float(np.mean(np.abs(residual))),
    }


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's average rank."""
    order = np.argsort(scores, kind="stable")
    provisional = np.empty(len(scores))
    provisional[order] = np.arange(1, len(scores) + 1)
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    group_mean = np.bincount(inverse, weights=provisional) / counts
    return group_mean[inverse]


def binary_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Probability a positive outscores a negative, ties counting half.

    Computed from the rank-sum identity rather than by comparing pairs.
    """
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateDataError("AUC needs at least one positive and one negative")
    ranks = _average_ranks(np.asarray(scores, dtype=np.float64))
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def classification_metrics(
    y_true: np.ndarray, proba: np.ndarray
) -> tuple[dict[str, float], np.ndarray]:
    """Accuracy and one-vs-rest macro AUC, plus the confusion matrix.

    Confusion rows are true classes, columns predicted. Classes missing
    from the truth are skipped in the macro average; if every class is
    missing a side, the AUC is NaN.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    proba = np.asarray(proba, dtype=np.float64)
    if proba.ndim != 2 or len(proba) != len(y_true) or len(y_true) == 0:
        raise ValueError(
            f"need (n, k) probabilities for n truths, got {proba.shape} "
            f"and {y_true.shape}"
        )
    k = proba.shape[1]
    if np.any(proba < 0) or np.any(np.abs(proba.sum(axis=1) - 1.0) > PROBABILITY_TOL):
        raise ValueError("probability rows must be non-negative and sum to one")
    if y_true.min() < 0 or y_true.max() >= k:
        raise ValueError(f"true classes must lie in 0..{k - 1}")

    y_pred = np.argmax(proba, axis=1)
    accuracy = float(np.mean(y_pred == y_true))
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)

    aucs = []
    for c in range(k):
        positives = y_true == c
        if positives.all() or not positives.any():
            continue
        aucs.append(binary_auc(positives, proba[:, c]))
    macro_auc = float(np.mean(aucs)) if aucs else float("nan")
    return {"accuracy": accuracy, "macro_auc": macro_auc}, confusion


def confusion_to_metrics(confusion: np.ndarray) -> dict[str, float]:
    """Flatten confusion cells into conf_<True>_<Pred> metric entries."""
    out = {}
    for i, true_name in enumerate(STRESS_CLASS_NAMES):
        for j, pred_name in enumerate(STRESS_CLASS_NAMES):
            out[f"conf_{true_name}_{pred_name}"] = float(confusion[i, j])
    return out


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    task: Task
    variant: Variant = Variant.FULL
    params: ForestParams = ForestParams()
    master_seed: int = 0
    n_reps: int = 10
    val_frac: float = 0.1
    test_frac: float = 0.1
    cv_folds: int = 10  # 0 skips the cross-validation pass
    single_date: str | None = None  # ISO date, required for SINGLE_DATE


@dataclass
class EvalReport:
    task: Task
    variant: Variant
    feature_names: tuple[str, ...]
    n_samples: int
    rows: list[tuple[str, dict[str, float]]] = field(default_factory=list)

    def metrics_for(self, label: str) -> dict[str, float]:
        for row_label, metrics in self.rows:
            if row_label == label:
                return metrics
        raise KeyError(f"no report row labeled {label!r}")


def _select_samples(
    samples: Sequence[Sample], config: ExperimentConfig
) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    names = features_for_variant(config.variant)
    rows = list(samples)
    if config.variant is Variant.SINGLE_DATE:
        if config.single_date is None:
            raise ValueError("the single-date variant needs a date")
        rows = [s for s in rows if s.date.isoformat() == config.single_date]
        if not rows:
            raise DegenerateDataError(
                f"no samples on {config.single_date}"
            )
    X, y_swp, y_cls = samples_to_matrix(rows, names)
    y = y_swp if config.task is Task.REGRESSION else y_cls
    return X, y, names


def _fit_and_score(
    X: np.ndarray,
    y: np.ndarray,
    names: tuple[str, ...],
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    train_seed: int,
    config: ExperimentConfig,
) -> dict[str, float]:
    kwargs = {}
    if config.task is Task.CLASSIFICATION:
        kwargs["n_classes"] = len(STRESS_CLASS_NAMES)
    forest = train_forest(
        X[train_idx],
        y[train_idx],
        config.task,
        names,
        train_seed,
        config.params,
        **kwargs,
    )
    if config.task is Task.REGRESSION:
        return regression_metrics(y[test_idx], predict(forest, X[test_idx]))
    metrics, confusion = classification_metrics(
        y[test_idx], predict_proba(forest, X[test_idx])
    )
    return {**metrics, **confusion_to_metrics(confusion)}


def _aggregate(rows: list[dict[str, float]]) -> tuple[dict[str, float], dict[str, float]]:
    keys: list[str] = []
    for row in rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    mean = {}
    std = {}
    for key in keys:
        vals = np.array([row[key] for row in rows if key in row])
        mean[key] = float(np.mean(vals))
        std[key] = float(np.std(vals, ddof=1)) if len(vals) >= 2 else float("nan")
    return mean, std


def run_experiment(samples: Sequence[Sample], config: ExperimentConfig) -> EvalReport:
    """Repeated random splits plus k-fold cross-validation on one dataset.

    Repetition r draws its split from (master, REP_SPLIT, r) and its
    forest from (master, REP_TRAIN, r); test metrics are averaged with
    sample standard deviations. The cross-validation pass shuffles once
    with (master, CV_SHUFFLE) and trains fold f with (master, CV_TRAIN, f).
    """
    X, y, names = _select_samples(samples, config)
    report = EvalReport(
        task=config.task,
        variant=config.variant,
        feature_names=names,
        n_samples=len(X),
    )

    rep_rows = []
    for r in range(config.n_reps):
        train_idx, _val_idx, test_idx = split_dataset(
            len(X),
            config.val_frac,
            config.test_frac,
            derive_seed(config.master_seed, REP_SPLIT, r),
        )
        metrics = _fit_and_score(
            X,
            y,
            names,
            train_idx,
            test_idx,
            derive_seed(config.master_seed, REP_TRAIN, r),
            config,
        )
        rep_rows.append(metrics)
        report.rows.append((f"rep{r}", metrics))
        logger.debug("rep %d: %s", r, metrics)
    mean, std = _aggregate(rep_rows)
    report.rows.append(("mean", mean))
    report.rows.append(("std", std))

    if config.cv_folds == 0:
        return report

    cv_rows = []
    folds = kfold_indices(
        len(X), config.cv_folds, derive_seed(config.master_seed, CV_SHUFFLE)
    )
    for f, (train_idx, test_idx) in enumerate(folds):
        metrics = _fit_and_score(
            X,
            y,
            names,
            train_idx,
            test_idx,
            derive_seed(config.master_seed, CV_TRAIN, f),
            config,
        )
        cv_rows.append(metrics)
        report.rows.append((f"cv{f}", metrics))
    cv_mean, cv_std = _aggregate(cv_rows)
    report.rows.append(("cv_mean", cv_mean))
    report.rows.append(("cv_std", cv_std))
    return report


def train_final_model(
    samples: Sequence[Sample], config: ExperimentConfig
) -> Forest:
    """Refit on every sample with the dedicated final-model seed."""
    X, y, names = _select_samples(samples, config)
    kwargs = {}
    if config.task is Task.CLASSIFICATION:
        kwargs["n_classes"] = len(STRESS_CLASS_NAMES)
    return train_forest(
        X,
        y,
        config.task,
        names,
        derive_seed(config.master_seed, FINAL_MODEL),
        config.params,
        **kwargs,
    )


def report_to_csv(report: EvalReport, path: str | Path) -> None:
    keys: list[str] = []
    for _, metrics in report.rows:
        for key in metrics:
            if key not in keys:
                keys.append(key)
    lines = [",".join(["label", *keys])]
    for label, metrics in report.rows:
        cells = [repr(metrics[k]) if k in metrics else "" for k in keys]
        lines.append(",".join([label, *cells]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def report_summary(report: EvalReport) -> str:
    """Short human-readable digest of the aggregate rows."""
    mean = report.metrics_for("mean")
    std = report.metrics_for("std")
    try:
        cv_mean = report.metrics_for("cv_mean")
    except KeyError:  # cross-validation pass was skipped
        cv_mean = {}
    lines = [
        f"task: {report.task.value}",
        f"variant: {report.variant.value}",
        f"features: {','.join(report.feature_names)}",
        f"samples: {report.n_samples}",
    ]
    for key in mean:
        if key.startswith("conf_"):
            continue
        lines.append(f"{key}: {mean[key]:.4f} +/- {std[key]:.4f}")
    for key in cv_mean:
        if key.startswith("conf_"):
            continue
        lines.append(f"cv_{key}: {cv_mean[key]:.4f}")
    return "\n".join(lines) + "\n"
