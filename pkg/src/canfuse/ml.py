"""From-scratch decision tree and random forest classifiers plus metrics.

Trees are grown CART-style, greedily minimizing weighted Gini impurity
with an exhaustive threshold search over midpoints of sorted unique
feature values. Ties break toward the lowest feature index, then the
lowest threshold, so training is fully deterministic. Forests train each
tree on an independent seeded bootstrap with ceil(sqrt(d)) candidate
features per split.

Scores are anomalous-class fractions: a tree scores a row by the
anomalous share of its leaf, a forest by the mean over trees, and the
predicted class is score >= 0.5.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container

_TREE_MAGIC = b"CANTREE\0"
_FOREST_MAGIC = b"CANFRST\0"


@dataclass(frozen=True)
class DtParams:
    max_depth: int | None = None
    min_samples_split: int = 2


@dataclass(frozen=True)
class RfParams:
    n_trees: int = 100
    max_features: int | str | None = "sqrt"
    bootstrap: bool = True
    max_depth: int | None = None
    min_samples_split: int = 2


def gini(n_normal: int, n_anomalous: int) -> float:
    m = n_normal + n_anomalous
    if m == 0:
        return 0.0
    return 1.0 - (n_normal * n_normal + n_anomalous * n_anomalous) / (m * m)


class DecisionTree:
    """Binary CART tree stored as flat node arrays.

    ``feature[i] == -1`` marks a leaf; ``counts[i]`` holds the
    (normal, anomalous) training counts that reached node i.
    """

    def __init__(self, feature, threshold, left, right, counts, n_features: int):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.counts = np.asarray(counts, dtype=np.int64).reshape(-1, 2)
        self.n_features = int(n_features)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_internal(self) -> int:
        return int((self.feature >= 0).sum())

    def _leaf_for_rows(self, x: np.ndarray) -> np.ndarray:
        pos = np.zeros(len(x), dtype=np.int32)
        while True:
            feat = self.feature[pos]
            active = feat >= 0
            if not active.any():
                return pos
            rows = np.nonzero(active)[0]
            p = pos[rows]
            go_left = x[rows, feat[rows]] <= self.threshold[p]
            pos[rows] = np.where(go_left, self.left[p], self.right[p])

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = _check_matrix(x, self.n_features)
        leaf = self._leaf_for_rows(x)
        c = self.counts[leaf]
        return c[:, 1] / c.sum(axis=1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.predict_proba(x) >= 0.5).astype(np.uint8)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return (
            self.n_features == other.n_features
            and np.array_equal(self.feature, other.feature)
            and np.array_equal(self.threshold, other.threshold, equal_nan=True)
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
            and np.array_equal(self.counts, other.counts)
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "counts": self.counts,
        }

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        full_meta = {"n_features": self.n_features}
        full_meta.update(meta or {})
        write_container(path, _TREE_MAGIC, self.arrays(), full_meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["DecisionTree", dict]:
        _, a, meta = read_container(path, _TREE_MAGIC)
        tree = cls(a["feature"], a["threshold"], a["left"], a["right"],
                   a["counts"], meta["n_features"])
        return tree, meta


def _check_matrix(x, n_features: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != n_features:
        raise ValueError(
            f"expected a matrix with {n_features} columns, got shape {x.shape}"
        )
    return x


def _best_split(x_sub, y_sub, candidates):
    """Lowest-impurity (column, threshold) over the candidate columns.

    ``x_sub`` holds the candidate columns side by side; ``candidates``
    maps them back to feature indices in ascending order. All columns
    are searched in one batch of array ops. Boundaries sit between
    distinct sorted values, so the search is invariant to how ties are
    ordered and an unstable sort is fine. Gini is concave, so any valid
    boundary is non-increasing in weighted impurity; zero-gain splits
    are accepted (an impure node keeps splitting toward pure leaves,
    which the parity-style fixtures need). Returns None only when no
    boundary exists.
    """
    m, k = x_sub.shape
    order = np.argsort(x_sub, axis=0)
    vs = np.take_along_axis(x_sub, order, axis=0)
    ca = np.cumsum(y_sub[order], axis=0, dtype=np.int64)
    valid = vs[1:] != vs[:-1]  # (m-1, k) split-after-row boundaries
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    a_left = ca[:-1].astype(np.float64)
    n_right = m - n_left
    a_right = ca[-1].astype(np.float64) - a_left
    gini_left = 1.0 - (a_left**2 + (n_left - a_left) ** 2) / n_left**2
    gini_right = 1.0 - (a_right**2 + (n_right - a_right) ** 2) / n_right**2
    weighted = (n_left * gini_left + n_right * gini_right) / m
    weighted[~valid] = np.inf
    best_rows = np.argmin(weighted, axis=0)  # first minimum -> lowest threshold
    col_best = weighted[best_rows, np.arange(k)]
    best_feature = -1
    best_threshold = math.nan
    best_impurity = np.inf
    for col in range(k):  # ascending feature index wins ties
        if col_best[col] < best_impurity:
            best_impurity = col_best[col]
            best_feature = int(candidates[col])
            row = best_rows[col]
            best_threshold = (vs[row, col] + vs[row + 1, col]) / 2.0
    if best_feature < 0:
        return None
    return best_feature, best_threshold


def _grow_tree(x, y, idx, params: DtParams, rng, max_features: int | None) -> DecisionTree:
    n_features = x.shape[1]
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[tuple[int, int]] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        counts.append((0, 0))
        return len(feature) - 1

    root = new_node()
    stack = [(idx, 0, root)]
    while stack:
        node_idx, depth, nid = stack.pop()
        m = len(node_idx)
        n_anom = int(y[node_idx].sum())
        counts[nid] = (m - n_anom, n_anom)
        if (
            n_anom == 0
            or n_anom == m
            or m < params.min_samples_split
            or (params.max_depth is not None and depth >= params.max_depth)
        ):
            continue
        if max_features is not None and max_features < n_features:
            candidates = np.sort(rng.choice(n_features, max_features, replace=False))
            x_sub = x[np.ix_(node_idx, candidates)]
        else:
            candidates = np.arange(n_features)
            x_sub = x[node_idx]
        y_sub = y[node_idx]
        found = _best_split(x_sub, y_sub, candidates)
        if found is None:
            continue
        f, thr = found
        go_left = x[node_idx, f] <= thr
        feature[nid] = f
        threshold[nid] = thr
        lid = new_node()
        rid = new_node()
        left[nid] = lid
        right[nid] = rid
        stack.append((node_idx[~go_left], depth + 1, rid))
        stack.append((node_idx[go_left], depth + 1, lid))
    return DecisionTree(feature, threshold, left, right, counts, n_features)


def train_dt(x: np.ndarray, y: np.ndarray, params: DtParams = DtParams()) -> DecisionTree:
    """Grow a deterministic CART tree on the full feature set."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.uint8)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError("training matrix needs at least one feature column")
    if len(x) != len(y):
        raise ValueError("rows and labels disagree")
    if len(x) < 2:
        raise ValueError("need at least 2 training rows")
    return _grow_tree(x, y, np.arange(len(x)), params, None, None)


class RandomForest:
    def __init__(self, trees: list[DecisionTree], params: RfParams, seed: int):
        if not trees:
            raise ValueError("forest needs at least one tree")
        self.trees = trees
        self.params = params
        self.seed = seed
        self.n_features = trees[0].n_features

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = _check_matrix(x, self.n_features)
        total = np.zeros(len(x), dtype=np.float64)
        for tree in self.trees:
            total += tree.predict_proba(x)
        return total / len(self.trees)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.predict_proba(x) >= 0.5).astype(np.uint8)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RandomForest):
            return NotImplemented
        return len(self.trees) == len(other.trees) and all(
            a == b for a, b in zip(self.trees, other.trees)
        )

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        arrays: dict[str, np.ndarray] = {}
        offsets = [0]
        stacked: dict[str, list[np.ndarray]] = {k: [] for k in self.trees[0].arrays()}
        for tree in self.trees:
            for k, v in tree.arrays().items():
                stacked[k].append(v)
            offsets.append(offsets[-1] + tree.n_nodes)
        for k, parts in stacked.items():
            arrays[k] = np.concatenate(parts)
        arrays["offsets"] = np.asarray(offsets, dtype=np.int64)
        full_meta = {
            "n_features": self.n_features,
            "seed": self.seed,
            "params": {
                "n_trees": self.params.n_trees,
                "max_features": self.params.max_features,
                "bootstrap": self.params.bootstrap,
                "max_depth": self.params.max_depth,
                "min_samples_split": self.params.min_samples_split,
            },
        }
        full_meta.update(meta or {})
        write_container(path, _FOREST_MAGIC, arrays, full_meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["RandomForest", dict]:
        _, a, meta = read_container(path, _FOREST_MAGIC)
        offsets = a["offsets"]
        trees = []
        for i in range(len(offsets) - 1):
            s, e = offsets[i], offsets[i + 1]
            trees.append(
                DecisionTree(
                    a["feature"][s:e], a["threshold"][s:e], a["left"][s:e],
                    a["right"][s:e], a["counts"][s:e], meta["n_features"],
                )
            )
        params = RfParams(**meta["params"])
        return cls(trees, params, meta.get("seed", 0)), meta


def _resolve_max_features(spec, n_features: int) -> int | None:
    if spec is None:
        return None
    if spec == "sqrt":
        return int(math.ceil(math.sqrt(n_features)))
    return min(int(spec), n_features)


def train_rf(
    x: np.ndarray,
    y: np.ndarray,
    params: RfParams = RfParams(),
    seed: int = 7,
    threads: int = 1,
) -> RandomForest:
    """Train a forest of seeded-bootstrap trees; deterministic per seed.

    Tree seeds are spawned up front so the result does not depend on
    thread scheduling.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.uint8)
    if params.n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need at least 2 aligned training rows")
    n, d = x.shape
    max_features = _resolve_max_features(params.max_features, d)
    dt_params = DtParams(params.max_depth, params.min_samples_split)
    child_seeds = np.random.SeedSequence(seed).spawn(params.n_trees)

    def build(i: int) -> DecisionTree:
        rng = np.random.default_rng(child_seeds[i])
        idx = rng.integers(0, n, n) if params.bootstrap else np.arange(n)
        return _grow_tree(x, y, idx, dt_params, rng, max_features)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(build, range(params.n_trees)))
    else:
        trees = [build(i) for i in range(params.n_trees)]
    return RandomForest(trees, params, seed)


def predict_proba(model, x: np.ndarray) -> np.ndarray:
    """Anomaly score per row in [0, 1] for a tree or forest."""
    return model.predict_proba(x)


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc_roc: float
    inference_time_ms_per_sample: float
    tp: int
    fp: int
    tn: int
    fn: int
    undefined: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc_roc": self.auc_roc,
            "inference_time_ms_per_sample": self.inference_time_ms_per_sample,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "undefined": list(self.undefined),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"accuracy   {self.accuracy:.6f}",
            f"precision  {self.precision:.6f}",
            f"recall     {self.recall:.6f}",
            f"f1         {self.f1:.6f}",
            f"auc_roc    {self.auc_roc:.6f}",
            f"time_ms    {self.inference_time_ms_per_sample:.6f}",
            f"confusion  tp={self.tp} fp={self.fp} tn={self.tn} fn={self.fn}",
        ]
        if self.undefined:
            lines.append(f"undefined  {','.join(self.undefined)}")
        return "\n".join(lines)


def confusion(labels: np.ndarray, predictions: np.ndarray) -> tuple[int, int, int, int]:
    labels = np.asarray(labels).astype(bool)
    predictions = np.asarray(predictions).astype(bool)
    tp = int((labels & predictions).sum())
    fp = int((~labels & predictions).sum())
    tn = int((~labels & ~predictions).sum())
    fn = int((labels & ~predictions).sum())
    return tp, fp, tn, fn


def metrics_from_confusion(tp: int, fp: int, tn: int, fn: int):
    """(accuracy, precision, recall, f1, undefined-ratio names)."""
    undefined = []
    total = tp + fp + tn + fn
    accuracy = (tp + tn) / total if total else 0.0
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        undefined.append("precision")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        undefined.append("recall")
    if precision + recall:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        undefined.append("f1")
    return accuracy, precision, recall, f1, tuple(undefined)


def accuracy_score(labels, predictions) -> float:
    tp, fp, tn, fn = confusion(labels, predictions)
    return metrics_from_confusion(tp, fp, tn, fn)[0]


def f1_score(labels, predictions) -> float:
    tp, fp, tn, fn = confusion(labels, predictions)
    return metrics_from_confusion(tp, fp, tn, fn)[3]


def auc_roc(labels: np.ndarray, scores: np.ndarray) -> tuple[float, bool]:
    """Rank-based AUC with midrank tie handling.

    Returns (auc, defined); single-class inputs are undefined and report
    0 with defined=False.
    """
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n = len(labels)
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.0, False
    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    boundaries = np.nonzero(s_sorted[1:] != s_sorted[:-1])[0] + 1
    starts = np.concatenate([[0], boundaries])
    stops = np.concatenate([boundaries, [n]])
    group_rank = (starts + stops + 1) / 2.0  # average of 1-based ranks in the group
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(group_rank, stops - starts)
    pos_rank_sum = ranks[labels].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)), True


def roc_points(labels: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) arrays over descending score thresholds, for plotting."""
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    s = scores[order]
    distinct = np.nonzero(np.diff(s))[0]
    cutpoints = np.concatenate([distinct, [len(s) - 1]])
    tps = np.cumsum(y)[cutpoints].astype(np.float64)
    fps = (cutpoints + 1) - tps
    n_pos = max(int(labels.sum()), 1)
    n_neg = max(len(labels) - int(labels.sum()), 1)
    tpr = np.concatenate([[0.0], tps / n_pos])
    fpr = np.concatenate([[0.0], fps / n_neg])
    return fpr, tpr


def evaluate(model, x: np.ndarray, y: np.ndarray) -> EvalReport:
    """Score a trained model on held-out rows."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate on empty rows")
    t0 = time.perf_counter()
    scores = model.predict_proba(x)
    elapsed = time.perf_counter() - t0
    predictions = scores >= 0.5
    tp, fp, tn, fn = confusion(y, predictions)
    accuracy, precision, recall, f1, undefined = metrics_from_confusion(tp, fp, tn, fn)
    auc, auc_defined = auc_roc(y, scores)
    if not auc_defined:
        undefined = undefined + ("auc_roc",)
    return EvalReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        auc_roc=auc,
        inference_time_ms_per_sample=elapsed * 1000.0 / len(y),
        tp=tp, fp=fp, tn=tn, fn=fn,
        undefined=undefined,
    )
