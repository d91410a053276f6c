"""Random-forest cost surrogate built from best-first regression trees.

Trees are grown best-first: among all current leaves, the one whose best
split removes the most squared error is split next, until the leaf budget
is spent or no split reduces the error. Split candidates are midpoints
between consecutive distinct values of a feature; rows with
``x[feature] <= threshold`` go left.

Tie rules (shared with the brute-force oracle in the test suite):

* within a node, splits whose gain is within ``TIE_RTOL * node_sse`` of the
  best count as tied; the lowest feature index wins, then the lowest
  threshold;
* between leaves, the larger gain wins and equal gains go to the leaf
  created first.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, SchemaError
from .features import FeatureConfig
from .kmeans import assign, kmeans

TIE_RTOL = 1e-9
MIN_GAIN_RTOL = 1e-12
FORMAT_NAME = "ddnmpc-surrogate"
FORMAT_VERSION = 1


@dataclass
class Tree:
    """Flat binary tree. Node 0 is the root; ``feature[i] == -1`` marks a leaf.

    ``value`` holds the mean training label of every node (internal nodes
    included, handy for inspection).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            nd = node[active]
            go_left = X[rows[active], self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def as_nested(self, node: int = 0):
        """``("leaf", value)`` / ``("split", feature, threshold, left, right)``."""
        if self.feature[node] < 0:
            return ("leaf", float(self.value[node]))
        return (
            "split",
            int(self.feature[node]),
            float(self.threshold[node]),
            self.as_nested(int(self.left[node])),
            self.as_nested(int(self.right[node])),
        )

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) if f >= 0 else 0.0 for f, t in zip(self.feature, self.threshold)],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        feature = np.asarray(d["feature"], dtype=np.int64)
        return cls(
            feature=feature,
            threshold=np.where(feature >= 0, np.asarray(d["threshold"], dtype=float), math.inf),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
        )


def best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray | None = None):
    """Best SSE-reducing split of one node.

    Returns ``(gain, feature, threshold)`` or ``None`` when no split reduces
    the error.
    """
    n = len(y)
    if n < 2:
        return None
    yc = y - y.mean()
    sse = float(yc @ yc)
    if sse <= 0.0:
        return None
    cols = np.arange(X.shape[1]) if features is None else features
    Xf = X[:, cols]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    csum = np.cumsum(yc[order], axis=0)
    total = csum[-1]
    left_sum = csum[:-1]
    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left
    gain = left_sum**2 / n_left + (total - left_sum) ** 2 / n_right - total**2 / n
    gain[xs[:-1] >= xs[1:]] = -np.inf
    best = gain.max()
    if not best > MIN_GAIN_RTOL * sse:
        return None
    tied = gain >= best - TIE_RTOL * sse
    # lowest feature among the tied, then lowest position (= lowest threshold)
    fpos = int(np.argmax(tied.any(axis=0)))
    i = int(np.argmax(tied[:, fpos]))
    lo_v, hi_v = xs[i, fpos], xs[i + 1, fpos]
    thr = (lo_v + hi_v) / 2.0
    if thr >= hi_v:
        thr = lo_v
    return float(gain[i, fpos]), int(cols[fpos]), float(thr)


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_leaf_nodes: int,
    seed: int | None = 0,
    bootstrap: bool = True,
    max_features: int | None = None,
) -> Tree:
    """Grow one best-first regression tree.

    With ``bootstrap`` the rows are first resampled with replacement (same
    size) using ``seed``. ``max_features`` < n_features draws a random
    feature subset at every split; ``None`` uses all features.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ContractError(f"X must be 2-D with one row per label, got {X.shape} and {y.shape}")
    if len(y) == 0:
        raise ContractError("cannot fit a tree on an empty dataset")
    if max_leaf_nodes < 1:
        raise ContractError("max_leaf_nodes must be >= 1")
    d = X.shape[1]
    if max_features is not None and not 1 <= max_features <= d:
        raise ContractError(f"max_features must lie in [1, {d}]")
    rng = np.random.default_rng(seed)
    if bootstrap:
        idx = rng.integers(0, len(y), size=len(y))
        X, y = X[idx], y[idx]

    def candidate(rows: np.ndarray):
        feats = None
        if max_features is not None and max_features < d:
            feats = np.sort(rng.choice(d, size=max_features, replace=False))
        return best_split(X[rows], y[rows], feats)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(math.inf)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        return len(feature) - 1

    root_rows = np.arange(len(y))
    new_node(root_rows)
    heap: list = []
    pending: dict[int, tuple] = {}

    def push(node: int, rows: np.ndarray) -> None:
        split = candidate(rows)
        if split is not None:
            pending[node] = (rows, split)
            heapq.heappush(heap, (-split[0], node))

    push(0, root_rows)
    n_leaves = 1
    while heap and n_leaves < max_leaf_nodes:
        _, node = heapq.heappop(heap)
        rows, (_, f, thr) = pending.pop(node)
        mask = X[rows, f] <= thr
        lrows, rrows = rows[mask], rows[~mask]
        li, ri = new_node(lrows), new_node(rrows)
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        n_leaves += 1
        push(li, lrows)
        push(ri, rrows)

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=float),
    )


def dataset_hash(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(y, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass
class ForestModel:
    trees: list[Tree]
    max_leaf_nodes: int
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    n_features: int = 9
    seed: int | None = None
    bootstrap: bool = True
    max_features: int | None = None
    data_hash: str = ""
    label_range: tuple[float, float] = (math.nan, math.nan)

    def __post_init__(self) -> None:
        self._pack()

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _pack(self) -> None:
        # All trees in one node table. Leaves loop onto themselves with an
        # infinite threshold, so a fixed number of descent steps suffices.
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
        feat, thr, lft, rgt, val = [], [], [], [], []
        for off, t in zip(offsets, self.trees):
            leaf = t.feature < 0
            own = np.arange(t.n_nodes) + off
            feat.append(np.where(leaf, 0, t.feature))
            thr.append(np.where(leaf, math.inf, t.threshold))
            lft.append(np.where(leaf, own, t.left + off))
            rgt.append(np.where(leaf, own, t.right + off))
            val.append(t.value)
        self._feat = np.concatenate(feat)
        self._thr = np.concatenate(thr)
        self._left = np.concatenate(lft)
        self._right = np.concatenate(rgt)
        self._val = np.concatenate(val)
        self._roots = offsets[:-1].astype(np.int64)
        self._depth = max(t.depth() for t in self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Mean of the tree predictions for every row of ``X``."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ContractError(f"expected {self.n_features} features, got {X.shape[1]}")
        node = np.broadcast_to(self._roots, (len(X), self.n_trees)).copy()
        rows = np.arange(len(X))[:, None]
        for _ in range(self._depth):
            go_left = X[rows, self._feat[node]] <= self._thr[node]
            node = np.where(go_left, self._left[node], self._right[node])
        out = self._val[node].mean(axis=1)
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_leaf_nodes": self.max_leaf_nodes,
            "n_features": self.n_features,
            "seed": self.seed,
            "bootstrap": self.bootstrap,
            "max_features": self.max_features,
            "data_hash": self.data_hash,
            "label_range": list(self.label_range),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict, feature_config: FeatureConfig) -> "ForestModel":
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            max_leaf_nodes=d["max_leaf_nodes"],
            feature_config=feature_config,
            n_features=d["n_features"],
            seed=d["seed"],
            bootstrap=d["bootstrap"],
            max_features=d["max_features"],
            data_hash=d["data_hash"],
            label_range=tuple(d["label_range"]),
        )


def tree_seeds(seed: int, n_trees: int) -> list[int]:
    """Per-tree seeds derived from the master seed."""
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2**63 - 1, size=n_trees)]


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 100,
    max_leaf_nodes: int = 1200,
    seed: int = 0,
    bootstrap: bool = True,
    max_features: int | None = None,
    feature_config: FeatureConfig | None = None,
    seeds: list[int] | None = None,
    n_jobs: int = 1,
) -> ForestModel:
    """Fit ``n_trees`` independent trees; ``seeds`` overrides the derived per-tree seeds."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if n_trees < 1:
        raise ContractError("n_trees must be >= 1")
    if len(y) == 0:
        raise ContractError("cannot fit a forest on an empty dataset")
    seeds = tree_seeds(seed, n_trees) if seeds is None else list(seeds)
    if len(seeds) != n_trees:
        raise ContractError(f"need {n_trees} tree seeds, got {len(seeds)}")
    if n_jobs == 1:
        trees = [fit_tree(X, y, max_leaf_nodes, s, bootstrap, max_features) for s in seeds]
    else:
        from joblib import Parallel, delayed

        trees = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(fit_tree)(X, y, max_leaf_nodes, s, bootstrap, max_features) for s in seeds
        )
    return ForestModel(
        trees=trees,
        max_leaf_nodes=max_leaf_nodes,
        feature_config=feature_config or FeatureConfig(),
        n_features=X.shape[1],
        seed=seed,
        bootstrap=bootstrap,
        max_features=max_features,
        data_hash=dataset_hash(X, y),
        label_range=(float(y.min()), float(y.max())),
    )


@dataclass
class ClusteredModel:
    """Piecewise surrogate: nearest centroid selects the forest."""

    centroids: np.ndarray
    forests: list[ForestModel]
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self) -> None:
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=float))
        if len(self.centroids) != len(self.forests) or not self.forests:
            raise ContractError("need one forest per centroid and at least one of each")
        if not np.all(np.isfinite(self.centroids)):
            raise ContractError("centroids must be finite")

    @property
    def n_features(self) -> int:
        return self.forests[0].n_features

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features:
            raise ContractError(f"expected {self.n_features} features, got {X.shape[1]}")
        if len(self.forests) == 1:
            out = self.forests[0].predict(X)
        else:
            labels = assign(X, self.centroids)
            out = np.empty(len(X))
            for c, forest in enumerate(self.forests):
                sel = labels == c
                if sel.any():
                    out[sel] = forest.predict(X[sel])
        return out[0] if single else out


def fit_clustered(
    X: np.ndarray,
    y: np.ndarray,
    k: int,
    n_trees: int = 100,
    max_leaf_nodes: int = 1200,
    seed: int = 0,
    feature_config: FeatureConfig | None = None,
    **forest_kw,
) -> ClusteredModel:
    """k-means on the feature rows, then one forest per non-empty cluster.

    With ``k == 1`` the single forest is exactly ``fit_forest(X, y, ...)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if k < 1:
        raise ContractError("k must be >= 1")
    if k > len(X):
        raise ContractError(f"k={k} exceeds the number of rows ({len(X)})")
    fc = feature_config or FeatureConfig()
    if k == 1:
        forest = fit_forest(X, y, n_trees, max_leaf_nodes, seed, feature_config=fc, **forest_kw)
        return ClusteredModel(X.mean(axis=0, keepdims=True), [forest], fc)
    km_seed, forest_seed = np.random.SeedSequence(seed).generate_state(2)
    centers, labels = kmeans(X, k, seed=int(km_seed))
    keep = [c for c in range(k) if (labels == c).any()]
    if len(keep) < k:
        warnings.warn(f"{k - len(keep)} empty cluster(s) dropped; using k={len(keep)}")
        centers = centers[keep]
        labels = assign(X, centers)
    forests = []
    for c in range(len(centers)):
        sel = labels == c
        forests.append(
            fit_forest(X[sel], y[sel], n_trees, max_leaf_nodes, int(forest_seed) + c, feature_config=fc, **forest_kw)
        )
    return ClusteredModel(centers, forests, fc)


@dataclass
class FitReport:
    r2: float
    mae: float
    err_mean: float
    err_std: float
    err_min: float
    err_max: float
    label_range: float
    n: int
    y_true: np.ndarray = field(repr=False)
    y_pred: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "r2": self.r2,
            "mae": self.mae,
            "err_mean": self.err_mean,
            "err_std": self.err_std,
            "err_min": self.err_min,
            "err_max": self.err_max,
            "label_range": self.label_range,
        }


def report_from_predictions(y_true, y_pred) -> FitReport:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if len(y_true) == 0:
        raise ContractError("empty test set")
    err = y_pred - y_true
    ss_res = float(((y_true - y_pred) ** 2).sum())
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else -math.inf)
    return FitReport(
        r2=r2,
        mae=float(np.abs(err).mean()),
        err_mean=float(err.mean()),
        err_std=float(err.std()),
        err_min=float(err.min()),
        err_max=float(err.max()),
        label_range=float(y_true.max() - y_true.min()),
        n=len(y_true),
        y_true=y_true,
        y_pred=y_pred,
    )


def fit_report(model, X_test: np.ndarray, y_test: np.ndarray) -> FitReport:
    return report_from_predictions(y_test, model.predict(np.atleast_2d(X_test)))


def save_model(path: str | Path, model: ClusteredModel | ForestModel) -> None:
    """Write a JSON model file (floats in shortest round-trip decimal form)."""
    if isinstance(model, ForestModel):
        model = ClusteredModel(np.zeros((1, model.n_features)), [model], model.feature_config)
    fc = model.feature_config
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "feature_config": {"m": fc.m, "smooth_width": fc.smooth_width},
        "centroids": model.centroids.tolist(),
        "forests": [f.to_dict() for f in model.forests],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def load_model(path: str | Path) -> ClusteredModel:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a JSON model file ({exc})") from exc
    if doc.get("format") != FORMAT_NAME:
        raise SchemaError(f"{path}: unknown model format {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported model version {doc.get('version')!r}")
    try:
        fc = FeatureConfig(**doc["feature_config"])
        forests = [ForestModel.from_dict(f, fc) for f in doc["forests"]]
        return ClusteredModel(np.asarray(doc["centroids"], dtype=float), forests, fc)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed model ({exc})") from exc
