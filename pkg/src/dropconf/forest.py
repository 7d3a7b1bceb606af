"""Random forest regression baseline built from scratch.

CART trees with variance-reduction splitting on bootstrap resamples, plus
10-fold out-of-fold calibration data for cross-conformal prediction. Per-tree
spread plays the same role as dropout-pass spread in the network pipeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .data import Dataset
from .ensemble import EnsemblePrediction, from_passes
from .seeds import derive_seed, rng_for


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_features: int | str = "all"
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_features != "all" and int(self.max_features) < 1:
            raise ValueError("max_features must be 'all' or >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass
class RegressionTree:
    """Flat array representation: feature[i] == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty(X.shape[0])
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if self.feature[node] < 0:
                out[rows] = self.value[node]
                continue
            go_left = X[rows, self.feature[node]] <= self.threshold[node]
            stack.append((self.left[node], rows[go_left]))
            stack.append((self.right[node], rows[~go_left]))
        return out


@dataclass
class Forest:
    trees: list
    config: ForestConfig
    seed: int
    n_features: int


def _exact_sse(values) -> float:
    """Sum of squared deviations via exactly-rounded summation.

    fsum makes the result a pure function of the value multiset, so two
    splits inducing the same row partition score identically — which is what
    lets the lowest-feature/lowest-threshold tie rule fire deterministically.
    """
    mean = math.fsum(values) / len(values)
    return math.fsum((v - mean) ** 2 for v in values)


def _best_split(X: np.ndarray, y: np.ndarray, feat_indices, min_leaf: int):
    """Greedy best (feature, threshold) minimizing summed child SSE.

    Thresholds are midpoints between consecutive distinct sorted values.
    Ties break to the lowest feature index, then the lowest threshold.
    Returns None when no split strictly reduces the parent SSE.

    All candidate features are scanned in one vectorized block: sort each
    column, form prefix sums of y and y^2 in sorted order, and score every
    boundary between distinct values. Candidates within rounding error of
    the minimum are then re-scored exactly so ties resolve consistently.
    """
    m = len(y)
    if m < 2:
        return None
    feats = np.asarray(feat_indices, dtype=np.intp)
    Xf = X[:, feats]
    tot = y.sum()
    tot2 = (y * y).sum()
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    ys = y[order]
    cum = np.cumsum(ys, axis=0)[:-1]
    cum2 = np.cumsum(ys * ys, axis=0)[:-1]
    nl = np.arange(1, m, dtype=np.float64)[:, None]
    nr = m - nl
    sse = (cum2 - cum * cum / nl) + ((tot2 - cum2) - (tot - cum) ** 2 / nr)
    invalid = xs[1:] <= xs[:-1]
    if min_leaf > 1:
        k = np.arange(1, m)
        invalid |= ((k < min_leaf) | (m - k < min_leaf))[:, None]
    sse[invalid] = math.inf
    best = sse.min()
    if math.isinf(best):
        return None
    # re-score everything the fast scan cannot reliably rank, then apply the
    # tie rules in feature-major order
    tol = 1e-9 * (tot2 + tot * tot / m) + 1e-300
    winner = None
    best_exact = math.inf
    for f_local, pos in np.argwhere(sse.T <= best + tol):
        score = _exact_sse(ys[: pos + 1, f_local]) + _exact_sse(ys[pos + 1 :, f_local])
        if score < best_exact:
            best_exact = score
            winner = (int(f_local), int(pos))
    if not best_exact < _exact_sse(y):
        return None
    f_local, pos = winner
    return int(feats[f_local]), (xs[pos, f_local] + xs[pos + 1, f_local]) / 2.0


def fit_cart(X: np.ndarray, y: np.ndarray, config: ForestConfig, rng: np.random.Generator) -> RegressionTree:
    """Grow a CART regression tree; leaves predict the mean of their rows."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 1:
        raise ValueError("fit_cart requires at least one row")
    d = X.shape[1]
    if config.max_features == "all":
        n_feat = d
    else:
        n_feat = min(int(config.max_features), d)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)))]
    while stack:
        node, rows = stack.pop()
        ysub = y[rows]
        split = None
        if len(rows) >= config.min_samples_split and ysub.min() < ysub.max():
            if n_feat == d:
                feats = range(d)
            else:
                feats = np.sort(rng.choice(d, size=n_feat, replace=False))
            split = _best_split(X[rows], ysub, feats, config.min_samples_leaf)
        if split is None:
            value[node] = float(ysub.mean())
            continue
        f, thr = split
        feature[node] = f
        threshold[node] = thr
        go_left = X[rows, f] <= thr
        left[node] = new_node()
        right[node] = new_node()
        stack.append((left[node], rows[go_left]))
        stack.append((right[node], rows[~go_left]))

    return RegressionTree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
    )


def fit_forest(train: Dataset, config: ForestConfig, seed: int) -> Forest:
    """Fit n_trees CART trees, each on its own bootstrap resample and stream."""
    X, y = train.features, train.labels
    n = len(y)
    trees = []
    for t in range(config.n_trees):
        rng = rng_for(seed, "tree", t)
        if config.bootstrap:
            idx = rng.integers(0, n, size=n)
            trees.append(fit_cart(X[idx], y[idx], config, rng))
        else:
            trees.append(fit_cart(X, y, config, rng))
    return Forest(trees=trees, config=config, seed=seed, n_features=X.shape[1])


def forest_predict(forest: Forest, features) -> EnsemblePrediction:
    """Per-tree predictions as the pass matrix; mean/std over trees."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    passes = np.column_stack([tree.predict(X) for tree in forest.trees])
    return from_passes(passes)


@dataclass
class OofCalibrationData:
    """Out-of-fold (y, y_hat, sigma) per training instance, aligned to row order."""

    y: np.ndarray
    y_hat: np.ndarray
    sigma: np.ndarray
    fold: np.ndarray  # which fold each instance was held out in

    def __post_init__(self):
        if not (len(self.y) == len(self.y_hat) == len(self.sigma) == len(self.fold)):
            raise ValueError("out-of-fold arrays must be aligned")


def oof_calibration(train: Dataset, config: ForestConfig, k: int, seed: int) -> OofCalibrationData:
    """k-fold out-of-fold predictions: each instance is predicted by the one
    forest fit on the other k-1 folds."""
    n = train.n_rows
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError("need at least k training rows")
    perm = rng_for(seed, "folds").permutation(n)
    folds = np.array_split(perm, k)
    y_hat = np.empty(n)
    sigma = np.empty(n)
    fold_of = np.empty(n, dtype=np.int32)
    for i, held_out in enumerate(folds):
        rest = np.concatenate([folds[j] for j in range(k) if j != i])
        model = fit_forest(train.subset(rest), config, derive_seed(seed, "fold", i))
        pred = forest_predict(model, train.features[held_out])
        y_hat[held_out] = pred.means
        sigma[held_out] = pred.stds
        fold_of[held_out] = i
    return OofCalibrationData(y=train.labels.copy(), y_hat=y_hat, sigma=sigma, fold=fold_of)


FOREST_FORMAT_VERSION = 1


def save_forest(forest: Forest, path) -> None:
    """Versioned binary serialization, round-trip exact."""
    meta = {
        "format_version": FOREST_FORMAT_VERSION,
        "kind": "forest",
        "config": asdict(forest.config),
        "seed": forest.seed,
        "n_features": forest.n_features,
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for i, tree in enumerate(forest.trees):
        arrays[f"t{i}_feature"] = tree.feature
        arrays[f"t{i}_threshold"] = tree.threshold
        arrays[f"t{i}_left"] = tree.left
        arrays[f"t{i}_right"] = tree.right
        arrays[f"t{i}_value"] = tree.value
    np.savez(path, **arrays)


def load_forest(path) -> Forest:
    with np.load(path) as npz:
        meta = json.loads(bytes(npz["meta"]).decode("utf-8"))
        if meta.get("kind") != "forest" or meta.get("format_version") != FOREST_FORMAT_VERSION:
            raise ValueError(f"{path}: not a version-{FOREST_FORMAT_VERSION} forest file")
        config = ForestConfig(**meta["config"])
        trees = [
            RegressionTree(
                feature=npz[f"t{i}_feature"],
                threshold=npz[f"t{i}_threshold"],
                left=npz[f"t{i}_left"],
                right=npz[f"t{i}_right"],
                value=npz[f"t{i}_value"],
            )
            for i in range(config.n_trees)
        ]
    return Forest(trees=trees, config=config, seed=int(meta["seed"]), n_features=int(meta["n_features"]))
