"""Random forest regression and classification built on flat-array CART trees.

Trees grow greedily: at each node a random feature subset is scored by
the surrogate split objective (sum-of-squares for regression, class
count squares for Gini) and the best midpoint threshold wins. All
randomness flows from a single integer seed through SeedSequence
spawning, so a (seed, data) pair always yields the same forest,
including tie-breaks: equal split scores resolve to the lowest feature
index, then the lowest threshold.

Trees are stored as parallel arrays (feature, threshold, left, right,
leaf payload) so batch prediction is an iterative vectorized descent
rather than per-sample recursion. Training-time node statistics
(sample counts and impurities) stay in memory only; the text
serialization carries just the structure needed to predict, so
impurity importance is available on freshly trained forests but not on
deserialized ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateDataError, FormatError


class Task(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


def derive_seed(*parts: int) -> int:
    """Fold integer parts into one uint64 stream seed via SeedSequence."""
    seq = np.random.SeedSequence([int(p) for p in parts])
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ForestParams:
    """Hyperparameters; None fields resolve to task defaults at fit time."""

    n_trees: int = 500
    max_depth: int | None = None
    min_leaf: int | None = None
    mtry: int | None = None
    bootstrap: bool = True

    def resolved(self, task: Task, n_features: int) -> "ForestParams":
        if self.n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1 or None, got {self.max_depth}")
        min_leaf = self.min_leaf
        if min_leaf is None:
            min_leaf = 1 if task is Task.CLASSIFICATION else 5
        if min_leaf < 1:
            raise ValueError(f"min_leaf must be >= 1, got {min_leaf}")
        mtry = self.mtry
        if mtry is None:
            if task is Task.CLASSIFICATION:
                mtry = math.ceil(math.sqrt(n_features))
            else:
                mtry = max(1, n_features // 3)
        if not 1 <= mtry <= n_features:
            raise ValueError(
                f"mtry must be in 1..{n_features}, got {mtry}"
            )
        return replace(self, min_leaf=min_leaf, mtry=mtry)


@dataclass
class TrainingStats:
    """Per-node bookkeeping needed for impurity importance; never serialized."""

    n_node_samples: np.ndarray  # (n_nodes,) int64
    impurity: np.ndarray  # (n_nodes,) float64


@dataclass
class DecisionTree:
    """One CART tree as parallel arrays; feature == -1 marks a leaf."""

    feature: np.ndarray  # (n_nodes,) int64, -1 at leaves
    threshold: np.ndarray  # (n_nodes,) float64, NaN at leaves
    left: np.ndarray  # (n_nodes,) int64, -1 at leaves
    right: np.ndarray  # (n_nodes,) int64, -1 at leaves
    leaf_value: np.ndarray | None = None  # regression: (n_nodes,) float64
    leaf_counts: np.ndarray | None = None  # classification: (n_nodes, K) int64
    stats: TrainingStats | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class Forest:
    task: Task
    params: ForestParams  # resolved values
    feature_names: tuple[str, ...]
    seed: int
    trees: list[DecisionTree]
    n_classes: int = 0  # 0 for regression

    @property
    def has_training_stats(self) -> bool:
        return all(t.stats is not None for t in self.trees)


def _node_impurity(task: Task, y: np.ndarray, n_classes: int) -> float:
    if task is Task.REGRESSION:
        return float(np.var(y))
    counts = np.bincount(y, minlength=n_classes)
    frac = counts / len(y)
    return float(1.0 - np.sum(frac * frac))


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    idx: np.ndarray,
    feats: np.ndarray,
    min_leaf: int,
    task: Task,
    n_classes: int,
) -> tuple[int, float] | None:
    """Best (feature, threshold) over the candidate features, or None.

    Scores every midpoint between consecutive distinct sorted values of
    every candidate feature in one shot. The score is the part of the
    impurity decrease that varies with the split (larger is better):
    sum(child)**2 / n_child summed over children, per class for Gini.
    The gains matrix is laid out (feature, position) so the flat argmax
    picks the lowest feature index and then the lowest threshold on ties.
    """
    n = len(idx)
    Xn = X[np.ix_(idx, feats)]  # (n, m)
    order = np.argsort(Xn, axis=0, kind="stable")
    Xs = np.take_along_axis(Xn, order, axis=0)

    left_counts = np.arange(1, n)  # candidate split i -> first i rows left
    sizes_ok = (left_counts >= min_leaf) & (n - left_counts >= min_leaf)
    distinct = Xs[1:] > Xs[:-1]  # (n-1, m)
    valid = distinct & sizes_ok[:, None]
    if not valid.any():
        return None

    if task is Task.REGRESSION:
        ys = y[idx][order]  # (n, m) column-wise sorted targets
        cum = np.cumsum(ys, axis=0)
        s_left = cum[:-1]
        s_right = cum[-1] - s_left
        scores = (
            s_left * s_left / left_counts[:, None]
            + s_right * s_right / (n - left_counts)[:, None]
        )
    else:
        onehot = np.eye(n_classes, dtype=np.float64)[y[idx]]  # (n, K)
        cs = np.cumsum(onehot[order], axis=0)  # (n, m, K)
        c_left = cs[:-1]
        c_right = cs[-1] - c_left
        scores = (
            np.sum(c_left * c_left, axis=2) / left_counts[:, None]
            + np.sum(c_right * c_right, axis=2) / (n - left_counts)[:, None]
        )

    scores = np.where(valid, scores, -np.inf)
    flat = int(np.argmax(scores.T))  # C-order: feature-major, then position
    j, pos = divmod(flat, n - 1)
    lo = Xs[pos, j]
    hi = Xs[pos + 1, j]
    thr = (lo + hi) / 2.0
    if thr == hi:  # midpoint rounded up to the upper value
        thr = lo
    return int(feats[j]), float(thr)


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    params: ForestParams,
    task: Task,
    n_classes: int,
) -> DecisionTree:
    n, p = X.shape
    if params.bootstrap:
        sample = rng.integers(0, n, n)
    else:
        sample = np.arange(n)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    counts: list[np.ndarray] = []
    n_samples: list[int] = []
    impurity: list[float] = []

    def make_leaf(node_id: int, idx: np.ndarray) -> None:
        feature[node_id] = -1
        if task is Task.REGRESSION:
            value[node_id] = float(np.mean(y[idx]))
        else:
            counts[node_id] = np.bincount(y[idx], minlength=n_classes)

    # Depth-first, left child first; node ids follow creation order.
    stack: list[tuple[np.ndarray, int, int, bool]] = [(sample, 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node_id = len(feature)
        feature.append(-2)
        threshold.append(float("nan"))
        left.append(-1)
        right.append(-1)
        value.append(float("nan"))
        counts.append(np.zeros(n_classes, dtype=np.int64))
        n_samples.append(len(idx))
        impurity.append(_node_impurity(task, y[idx], n_classes))
        if parent >= 0:
            if is_left:
                left[parent] = node_id
            else:
                right[parent] = node_id

        at_depth_limit = params.max_depth is not None and depth >= params.max_depth
        if (
            at_depth_limit
            or len(idx) < 2 * params.min_leaf
            or impurity[node_id] == 0.0
        ):
            make_leaf(node_id, idx)
            continue

        m = params.mtry
        feats = np.sort(rng.choice(p, size=m, replace=False))
        found = _best_split(X, y, idx, feats, params.min_leaf, task, n_classes)
        if found is None:
            make_leaf(node_id, idx)
            continue
        feat, thr = found
        go_left = X[idx, feat] <= thr
        feature[node_id] = feat
        threshold[node_id] = thr
        # Push right first so the left subtree is numbered first.
        stack.append((idx[~go_left], depth + 1, node_id, False))
        stack.append((idx[go_left], depth + 1, node_id, True))

    tree = DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        stats=TrainingStats(
            n_node_samples=np.array(n_samples, dtype=np.int64),
            impurity=np.array(impurity, dtype=np.float64),
        ),
    )
    if task is Task.REGRESSION:
        tree.leaf_value = np.array(value, dtype=np.float64)
    else:
        tree.leaf_counts = np.stack(counts).astype(np.int64)
    return tree


def train_forest(
    X: np.ndarray,
    y: np.ndarray,
    task: Task,
    feature_names: Sequence[str],
    seed: int,
    params: ForestParams = ForestParams(),
    n_classes: int | None = None,
) -> Forest:
    """Fit a forest; tree t uses the generator seeded with [seed, t]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-dimensional, got shape {X.shape}")
    n, p = X.shape
    if n == 0 or p == 0:
        raise DegenerateDataError(f"cannot train on X with shape {X.shape}")
    if len(feature_names) != p:
        raise ValueError(
            f"{len(feature_names)} feature names for {p} columns"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")

    if task is Task.REGRESSION:
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
        k = 0
    else:
        y = np.asarray(y)
        if not np.issubdtype(y.dtype, np.integer):
            raise ValueError("classification targets must be integer class indices")
        y = y.astype(np.int64)
        if y.size and y.min() < 0:
            raise ValueError("class indices must be >= 0")
        k = int(y.max()) + 1 if n_classes is None else int(n_classes)
        if y.size and y.max() >= k:
            raise ValueError(f"class index {int(y.max())} outside 0..{k - 1}")
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")

    resolved = params.resolved(task, p)
    trees = [
        _grow_tree(X, y, np.random.default_rng([seed, t]), resolved, task, k)
        for t in range(resolved.n_trees)
    ]
    return Forest(
        task=task,
        params=resolved,
        feature_names=tuple(feature_names),
        seed=int(seed),
        trees=trees,
        n_classes=k,
    )


def _descend(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    """Leaf node id for every row, via level-synchronous vectorized descent."""
    node = np.zeros(len(X), dtype=np.int64)
    while True:
        feat = tree.feature[node]
        active = feat >= 0
        if not active.any():
            return node
        col = np.maximum(feat, 0)
        vals = X[np.arange(len(X)), col]
        go_left = vals <= tree.threshold[node]
        nxt = np.where(go_left, tree.left[node], tree.right[node])
        node = np.where(active, nxt, node)


def _as_matrix(X: np.ndarray, p: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != p:
        raise ValueError(f"expected feature matrix with {p} columns, got {X.shape}")
    return X, single


def predict(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Regression: mean of tree means. Classification: argmax vote class."""
    p = len(forest.feature_names)
    X, single = _as_matrix(X, p)
    if forest.task is Task.REGRESSION:
        acc = np.zeros(len(X))
        for tree in forest.trees:
            acc += tree.leaf_value[_descend(tree, X)]
        out = acc / len(forest.trees)
    else:
        out = np.argmax(predict_proba(forest, X), axis=1)
    return out[0] if single else out


def predict_proba(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Fraction of trees voting each class; each tree votes its leaf majority."""
    if forest.task is not Task.CLASSIFICATION:
        raise ValueError("predict_proba requires a classification forest")
    p = len(forest.feature_names)
    X, single = _as_matrix(X, p)
    votes = np.zeros((len(X), forest.n_classes))
    for tree in forest.trees:
        leaf = _descend(tree, X)
        # argmax breaks count ties toward the lower class index
        winner = np.argmax(tree.leaf_counts[leaf], axis=1)
        votes[np.arange(len(X)), winner] += 1.0
    proba = votes / len(forest.trees)
    return proba[0] if single else proba


def impurity_importance(forest: Forest) -> np.ndarray:
    """Mean decrease in impurity per feature, normalized to sum to one.

    Each split contributes (n_node/n_root) * (I_node - weighted child I)
    to its feature; trees are averaged. Requires the in-memory training
    statistics, so forests loaded from disk cannot be scored.
    """
    if not forest.has_training_stats:
        raise ValueError(
            "impurity importance needs training statistics; "
            "forests loaded from disk do not carry them"
        )
    p = len(forest.feature_names)
    total = np.zeros(p)
    for tree in forest.trees:
        stats = tree.stats
        n_root = stats.n_node_samples[0]
        split = tree.feature >= 0
        ids = np.nonzero(split)[0]
        n_node = stats.n_node_samples[ids]
        lhs, rhs = tree.left[ids], tree.right[ids]
        child_impurity = (
            stats.n_node_samples[lhs] * stats.impurity[lhs]
            + stats.n_node_samples[rhs] * stats.impurity[rhs]
        ) / n_node
        decrease = (n_node / n_root) * (stats.impurity[ids] - child_impurity)
        np.add.at(total, tree.feature[ids], decrease)
    total /= len(forest.trees)
    s = total.sum()
    return total / s if s > 0 else total


@dataclass(frozen=True)
class PdpCurve:
    feature_name: str
    grid: np.ndarray  # (g,) ascending, duplicates removed
    values: np.ndarray  # regression (g,); classification (g, n_classes)


def partial_dependence(
    forest: Forest, X: np.ndarray, feature: int | str, grid_points: int = 20
) -> PdpCurve:
    """Mean prediction as one feature sweeps over its empirical quantiles.

    The grid takes quantiles at j/(grid_points-1) for j = 0..grid_points-1
    and drops duplicates, so heavily tied features yield shorter grids.
    """
    if grid_points < 2:
        raise ValueError(f"grid_points must be >= 2, got {grid_points}")
    if isinstance(feature, str):
        if feature not in forest.feature_names:
            raise ValueError(f"unknown feature {feature!r}")
        f = forest.feature_names.index(feature)
    else:
        f = int(feature)
        if not 0 <= f < len(forest.feature_names):
            raise ValueError(f"feature index {f} out of range")
    X, _ = _as_matrix(np.atleast_2d(X), len(forest.feature_names))
    if len(X) == 0:
        raise DegenerateDataError("partial dependence needs at least one sample")

    quantiles = np.arange(grid_points) / (grid_points - 1)
    grid = np.unique(np.quantile(X[:, f], quantiles))
    rows = []
    for v in grid:
        Xv = X.copy()
        Xv[:, f] = v
        if forest.task is Task.REGRESSION:
            rows.append(float(np.mean(predict(forest, Xv))))
        else:
            rows.append(np.mean(predict_proba(forest, Xv), axis=0))
    values = np.array(rows)
    return PdpCurve(
        feature_name=forest.feature_names[f], grid=grid, values=values
    )


# ---------------------------------------------------------------------------
# Serialization: a line-oriented text format with repr() floats so numbers
# round-trip exactly.
# ---------------------------------------------------------------------------


def save_forest(forest: Forest, path: str | Path) -> None:
    params = forest.params
    depth = "none" if params.max_depth is None else str(params.max_depth)
    lines = [
        f"task {forest.task.value}",
        f"n_trees {len(forest.trees)}",
        f"features {','.join(forest.feature_names)}",
        f"seed {forest.seed}",
        f"hyperparams max_depth={depth} min_leaf={params.min_leaf} "
        f"mtry={params.mtry} bootstrap={'true' if params.bootstrap else 'false'}",
    ]
    for t, tree in enumerate(forest.trees):
        lines.append(f"tree {t} {tree.n_nodes}")
        for i in range(tree.n_nodes):
            if tree.feature[i] >= 0:
                lines.append(
                    f"{i} split {tree.feature[i]} {float(tree.threshold[i])!r} "
                    f"{tree.left[i]} {tree.right[i]}"
                )
            elif forest.task is Task.REGRESSION:
                lines.append(f"{i} leaf {float(tree.leaf_value[i])!r}")
            else:
                counts = " ".join(str(int(c)) for c in tree.leaf_counts[i])
                lines.append(f"{i} leaf {counts}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _header_value(lines: list[str], i: int, key: str, path: Path) -> str:
    if i >= len(lines) or not lines[i].startswith(key + " "):
        raise FormatError(f"{path}: expected '{key}' on line {i + 1}")
    return lines[i][len(key) + 1 :]


def load_forest(path: str | Path) -> Forest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"forest file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()

    try:
        task = Task(_header_value(lines, 0, "task", path))
    except ValueError:
        raise FormatError(f"{path}: unknown task {lines[0]!r}") from None
    try:
        n_trees = int(_header_value(lines, 1, "n_trees", path))
        names = tuple(_header_value(lines, 2, "features", path).split(","))
        seed = int(_header_value(lines, 3, "seed", path))
        hp: dict[str, str] = {}
        for item in _header_value(lines, 4, "hyperparams", path).split():
            key, _, val = item.partition("=")
            hp[key] = val
        params = ForestParams(
            n_trees=n_trees,
            max_depth=None if hp["max_depth"] == "none" else int(hp["max_depth"]),
            min_leaf=int(hp["min_leaf"]),
            mtry=int(hp["mtry"]),
            bootstrap=hp["bootstrap"] == "true",
        )
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from None

    trees: list[DecisionTree] = []
    n_classes = 0
    i = 5
    for t in range(n_trees):
        parts = lines[i].split() if i < len(lines) else []
        if len(parts) != 3 or parts[0] != "tree" or parts[1] != str(t):
            raise FormatError(f"{path}: expected 'tree {t} <count>' on line {i + 1}")
        count = int(parts[2])
        i += 1
        feature = np.full(count, -1, dtype=np.int64)
        threshold = np.full(count, np.nan)
        left = np.full(count, -1, dtype=np.int64)
        right = np.full(count, -1, dtype=np.int64)
        leaf_value = np.full(count, np.nan) if task is Task.REGRESSION else None
        leaf_rows: list[tuple[int, np.ndarray]] = []
        for node in range(count):
            if i >= len(lines):
                raise FormatError(f"{path}: truncated inside tree {t}")
            fields = lines[i].split()
            i += 1
            try:
                if int(fields[0]) != node:
                    raise FormatError(
                        f"{path}: node ids must be sequential in tree {t}"
                    )
                if fields[1] == "split":
                    feature[node] = int(fields[2])
                    threshold[node] = float(fields[3])
                    left[node] = int(fields[4])
                    right[node] = int(fields[5])
                    if not (
                        0 <= feature[node] < len(names)
                        and node < left[node] < count
                        and node < right[node] < count
                    ):
                        raise FormatError(
                            f"{path}: bad split references in tree {t} node {node}"
                        )
                elif fields[1] == "leaf":
                    if task is Task.REGRESSION:
                        if len(fields) != 3:
                            raise FormatError(
                                f"{path}: regression leaves take one value"
                            )
                        leaf_value[node] = float(fields[2])
                    else:
                        counts = np.array([int(c) for c in fields[2:]], dtype=np.int64)
                        if len(counts) < 1:
                            raise FormatError(f"{path}: empty class counts")
                        leaf_rows.append((node, counts))
                else:
                    raise FormatError(
                        f"{path}: unknown node kind {fields[1]!r} in tree {t}"
                    )
            except FormatError:
                raise
            except (ValueError, IndexError):
                raise FormatError(
                    f"{path}: malformed node line in tree {t}: {lines[i - 1]!r}"
                ) from None
        leaf_counts = None
        if task is Task.CLASSIFICATION:
            widths = {len(c) for _, c in leaf_rows}
            if len(widths) != 1:
                raise FormatError(f"{path}: inconsistent class counts in tree {t}")
            k = widths.pop()
            if n_classes == 0:
                n_classes = k
            elif k != n_classes:
                raise FormatError(f"{path}: trees disagree on class count")
            leaf_counts = np.zeros((count, n_classes), dtype=np.int64)
            for node, counts in leaf_rows:
                leaf_counts[node] = counts
        trees.append(
            DecisionTree(
                feature=feature,
                threshold=threshold,
                left=left,
                right=right,
                leaf_value=leaf_value,
                leaf_counts=leaf_counts,
            )
        )
    if i != len(lines) and any(line.strip() for line in lines[i:]):
        raise FormatError(f"{path}: trailing content after tree {n_trees - 1}")
    return Forest(
        task=task,
        params=params,
        feature_names=names,
        seed=seed,
        trees=trees,
        n_classes=n_classes,
    )
