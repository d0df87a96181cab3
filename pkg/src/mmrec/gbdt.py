"""Gradient-boosted regression trees used as a tabular item embedder.

Trees are grown greedily on squared error with exact enumeration of split
points; an item's embedding is the shrinkage-scaled leaf value it reaches in
each tree, so the components plus the base score equal the prediction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .auxiliary import ModalityEmbeddingTable
from .errors import ConfigError, EncodingError, InsufficientDataError, ParseError

N_FOLDS = 4


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str  # "categorical" or "numeric"
    vocabulary: tuple[str, ...] = ()


@dataclass
class TabularSchema:
    features: list[Feature]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigError("feature names must be unique")
        for f in self.features:
            if f.kind not in ("categorical", "numeric"):
                raise ConfigError(f"feature {f.name!r}: unknown kind {f.kind!r}")
            if f.kind == "categorical" and not f.vocabulary:
                raise ConfigError(f"feature {f.name!r}: empty vocabulary")

    @property
    def width(self) -> int:
        return sum(len(f.vocabulary) if f.kind == "categorical" else 1 for f in self.features)

    @classmethod
    def infer(cls, rows: Sequence[dict], categorical: Sequence[str], numeric: Sequence[str]) -> "TabularSchema":
        """Schema in declared order; vocabularies are the sorted observed values."""
        feats = [Feature(name, "categorical", tuple(sorted({str(r[name]) for r in rows}))) for name in categorical]
        feats += [Feature(name, "numeric") for name in numeric]
        return cls(feats)


def one_hot_encode(schema: TabularSchema, rows: Sequence[dict]) -> np.ndarray:
    out = np.zeros((len(rows), schema.width))
    col = 0
    for f in schema.features:
        if f.kind == "categorical":
            index = {v: k for k, v in enumerate(f.vocabulary)}
            for r, row in enumerate(rows):
                value = str(row[f.name])
                if value not in index:
                    raise EncodingError(f"feature {f.name!r}: value {value!r} not in vocabulary")
                out[r, col + index[value]] = 1.0
            col += len(f.vocabulary)
        else:
            for r, row in enumerate(rows):
                value = float(row[f.name])
                if not np.isfinite(value):
                    raise EncodingError(f"feature {f.name!r}: non-finite value")
                out[r, col] = value
            col += 1
    return out


@dataclass
class RegressionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf. Rows with x[f] < thr go left."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def _new(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.value) - 1

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        x = np.atleast_2d(x)
        node = np.zeros(x.shape[0], dtype=np.int64)
        feature = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        active = feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            n = node[idx]
            go_left = x[idx, feature[n]] < thr[n]
            node[idx] = np.where(go_left, left[n], right[n])
            active = feature[node] >= 0
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.value)[self.apply(x)]

    @property
    def depth(self) -> int:
        def walk(i):
            return 0 if self.feature[i] < 0 else 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)


def best_split(x: np.ndarray, r: np.ndarray):
    """(gain, feature, threshold) of the best split, or None when nothing helps.

    Gain is the reduction in the sum of squared errors. Ties keep the first
    candidate in (feature, threshold) order.
    """
    n = r.size
    if n < 2:
        return None
    total = r.sum()
    base = total * total / n
    min_gain = 1e-12 * float(np.dot(r, r))
    best = None
    for f in range(x.shape[1]):
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        cs = np.cumsum(r[order])
        # split between positions k-1 and k where the value changes
        cut = np.flatnonzero(xs[1:] > xs[:-1]) + 1
        if cut.size == 0:
            continue
        n_left = cut.astype(np.float64)
        s_left = cs[cut - 1]
        gain = s_left**2 / n_left + (total - s_left) ** 2 / (n - n_left) - base
        k = int(np.argmax(gain))
        if gain[k] > min_gain and (best is None or gain[k] > best[0]):
            best = (float(gain[k]), f, float(xs[cut[k]]))
    return best


def fit_tree(x: np.ndarray, residuals: np.ndarray, max_depth: int | None = 3) -> RegressionTree:
    x = np.asarray(x, dtype=np.float64)
    residuals = np.asarray(residuals, dtype=np.float64)
    if x.shape[0] < 1:
        raise InsufficientDataError("cannot fit a tree on zero rows")
    tree = RegressionTree()

    def grow(rows: np.ndarray, depth: int) -> int:
        node = tree._new(residuals[rows].mean())
        if max_depth is not None and depth >= max_depth:
            return node
        split = best_split(x[rows], residuals[rows])
        if split is None:
            return node
        _, f, thr = split
        mask = x[rows, f] < thr
        tree.feature[node] = f
        tree.threshold[node] = thr
        left = grow(rows[mask], depth + 1)
        right = grow(rows[~mask], depth + 1)
        tree.left[node] = left
        tree.right[node] = right
        return node

    grow(np.arange(x.shape[0]), 0)
    return tree


@dataclass
class BoostedEnsemble:
    trees: list[RegressionTree]
    shrinkage: float
    base_score: float
    train_mse: list[float] = field(default_factory=list)

    def embed(self, x: np.ndarray) -> np.ndarray:
        """(rows, n_trees) matrix of shrinkage-scaled leaf values."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if not self.trees:
            return np.zeros((x.shape[0], 0))
        return np.stack([self.shrinkage * t.predict(x) for t in self.trees], axis=1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        emb = self.embed(x)
        return np.array([row.sum() + self.base_score for row in emb])


def embed_item(ensemble: BoostedEnsemble, row: np.ndarray) -> np.ndarray:
    return ensemble.embed(np.asarray(row, dtype=np.float64).reshape(1, -1))[0]


def fit_ensemble(
    x: np.ndarray,
    y: np.ndarray,
    n_trees: int,
    shrinkage: float = 0.1,
    max_depth: int | None = 3,
    rng: np.random.Generator | None = None,
    subsample: float = 1.0,
) -> BoostedEnsemble:
    """Plain residual boosting on squared loss.

    ``subsample < 1`` fits each tree on a random row subset drawn from ``rng``.
    """
    if n_trees < 1:
        raise ConfigError("need at least one tree")
    if not 0.0 < shrinkage <= 1.0:
        raise ConfigError("shrinkage must lie in (0, 1]")
    if subsample < 1.0 and rng is None:
        raise ConfigError("row subsampling needs an rng")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    base = float(y.mean())
    pred = np.full(y.shape, base)
    ens = BoostedEnsemble([], shrinkage, base)
    for _ in range(n_trees):
        resid = y - pred
        if subsample < 1.0:
            rows = np.sort(rng.choice(y.size, size=max(1, int(round(subsample * y.size))), replace=False))
            tree = fit_tree(x[rows], resid[rows], max_depth)
        else:
            tree = fit_tree(x, resid, max_depth)
        ens.trees.append(tree)
        pred = pred + shrinkage * tree.predict(x)
        ens.train_mse.append(float(np.mean((y - pred) ** 2)))
    return ens


@dataclass(frozen=True)
class GridPoint:
    trees: int
    depth: int | None
    shrinkage: float


@dataclass
class CVReport:
    points: list[GridPoint]
    fold_mae: np.ndarray  # (points, folds)
    mean_mae: np.ndarray
    best_index: int

    @property
    def best(self) -> GridPoint:
        return self.points[self.best_index]


def kfold_indices(n: int, rng: np.random.Generator, folds: int = N_FOLDS) -> list[np.ndarray]:
    return [np.sort(part) for part in np.array_split(rng.permutation(n), folds)]


def cross_validate(x, y, grid: Sequence[GridPoint], rng: np.random.Generator) -> CVReport:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.size < N_FOLDS:
        raise InsufficientDataError(f"{N_FOLDS}-fold cross-validation needs at least {N_FOLDS} rows, got {y.size}")
    if not grid:
        raise ConfigError("empty hyperparameter grid")
    parts = kfold_indices(y.size, rng)
    fold_mae = np.zeros((len(grid), N_FOLDS))
    for p, point in enumerate(grid):
        for k, val in enumerate(parts):
            tr = np.setdiff1d(np.arange(y.size), val)
            ens = fit_ensemble(x[tr], y[tr], point.trees, point.shrinkage, point.depth)
            fold_mae[p, k] = np.mean(np.abs(ens.predict(x[val]) - y[val]))
    mean = fold_mae.mean(axis=1)
    return CVReport(list(grid), fold_mae, mean, int(np.argmin(mean)))


def load_item_attributes(path) -> tuple[list[str], list[dict]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh if ln.strip()]
    if not lines:
        raise ParseError("empty item-attribute file", 1)
    header = lines[0].split("\t")
    if header[0] != "item_id":
        raise ParseError("first header column must be 'item_id'", 1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(fields)}", lineno)
        rows.append(dict(zip(header, fields)))
    return header, rows


@dataclass
class TabularResult:
    table: ModalityEmbeddingTable
    ensemble: BoostedEnsemble
    report: CVReport
    train_items: list[str]


def tabular_embeddings(
    rows: Sequence[dict],
    schema: TabularSchema,
    ratings: dict[str, float],
    grid: Sequence[GridPoint],
    rng: np.random.Generator,
    train_fraction: float = 0.7,
) -> TabularResult:
    """One-hot encode, pick hyperparameters by 4-fold CV MAE on the training share,
    refit there, and embed every item."""
    x = one_hot_encode(schema, rows)
    ids = [str(r["item_id"]) for r in rows]
    rated = np.array([i for i, item in enumerate(ids) if item in ratings], dtype=np.int64)
    if rated.size == 0:
        raise ConfigError("no item has a rating; the tabular embedder needs rating targets")
    shuffled = rated[rng.permutation(rated.size)]
    n_train = max(N_FOLDS, int(round(train_fraction * rated.size)))
    train_rows = np.sort(shuffled[:n_train])
    y = np.array([ratings[ids[i]] for i in train_rows])
    report = cross_validate(x[train_rows], y, grid, rng)
    best = report.best
    ens = fit_ensemble(x[train_rows], y, best.trees, best.shrinkage, best.depth)
    emb = ens.embed(x)
    table = ModalityEmbeddingTable("tabular", len(ens.trees), {item: emb[i] for i, item in enumerate(ids)})
    return TabularResult(table, ens, report, [ids[i] for i in train_rows])
