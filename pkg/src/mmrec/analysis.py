"""Attention-profile clustering and disjoint-set similarity heatmaps."""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ColdStartError, ConfigError, SetSizeError


def extract_profiles(model, histories: Sequence[Sequence[int]], aux=None) -> np.ndarray:
    """Mean attention matrix over layers and heads, flattened row-major, per user."""
    for h in histories:
        if len(h) == 0:
            raise ColdStartError("cannot profile a user with an empty history")
    hidden, cache = model.forward(model.prediction_inputs(histories), aux)
    att = np.mean([c["att"].mean(axis=1) for c in cache["blocks"]], axis=0)  # (B, N, N)
    return att.reshape(att.shape[0], -1)


def extract_profile(model, history, aux=None) -> np.ndarray:
    return extract_profiles(model, [history], aux)[0]


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assignments: np.ndarray
    wcss: float
    history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _sq_dist(x, c):
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(-1)


def _plus_plus(x, k, rng):
    centers = [x[int(rng.integers(x.shape[0]))]]
    for _ in range(1, k):
        d2 = _sq_dist(x, np.array(centers)).min(axis=1)
        total = d2.sum()
        idx = int(rng.integers(x.shape[0])) if total <= 0 else int(rng.choice(x.shape[0], p=d2 / total))
        centers.append(x[idx])
    return np.array(centers, dtype=np.float64)


def _lloyd(x, centroids, max_iter):
    history = []
    assign = None
    for _ in range(max_iter):
        d2 = _sq_dist(x, centroids)
        new = d2.argmin(axis=1)
        history.append(float(d2[np.arange(x.shape[0]), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(centroids.shape[0]):
            members = assign == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
            else:
                # empty cluster: move it onto the worst-served point
                far = int(d2[np.arange(x.shape[0]), assign].argmax())
                centroids[j] = x[far]
                assign[far] = j
    d2 = _sq_dist(x, centroids)
    assign = d2.argmin(axis=1)
    wcss = float(d2[np.arange(x.shape[0]), assign].sum())
    return ClusterModel(centroids, assign, wcss, history)


def kmeans(profiles, k: int, rng: np.random.Generator, max_iter: int = 100, n_init: int = 1) -> ClusterModel:
    """k-means++ seeding followed by Lloyd iterations; best of ``n_init`` restarts."""
    x = np.asarray(profiles, dtype=np.float64)
    if k < 1:
        raise ConfigError("k must be >= 1")
    if k > x.shape[0]:
        raise ConfigError(f"k={k} exceeds the number of profiles ({x.shape[0]})")
    best = None
    for _ in range(max(1, n_init)):
        fit = _lloyd(x, _plus_plus(x, k, rng), max_iter)
        if best is None or fit.wcss < best.wcss:
            best = fit
    return best


def elbow_curve(profiles, k_range: Sequence[int], rng, n_init: int = 5) -> list[float]:
    return [kmeans(profiles, k, rng, n_init=n_init).wcss for k in k_range]


def elbow_from_wcss(k_range: Sequence[int], wcss: Sequence[float]) -> int:
    """k at the largest second difference; ties go to the smallest k."""
    ks = list(k_range)
    if len(ks) < 3:
        raise ConfigError("elbow selection needs a range of at least three k values")
    curv = [wcss[i - 1] - 2 * wcss[i] + wcss[i + 1] for i in range(1, len(ks) - 1)]
    return ks[1 + int(np.argmax(curv))]


def elbow_select(profiles, k_range: Sequence[int], rng: np.random.Generator, n_init: int = 5) -> int:
    ks = list(k_range)
    if len(ks) < 3:
        raise ConfigError("elbow selection needs a range of at least three k values")
    return elbow_from_wcss(ks, elbow_curve(profiles, ks, rng, n_init))


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class SimilarityHeatmap:
    matrix: np.ndarray
    clusters: list[int]
    set_one: list[np.ndarray]
    set_two: list[np.ndarray]

    @property
    def labels(self) -> list[str]:
        return cluster_labels(len(self.clusters))

    def to_tsv(self) -> str:
        labels = self.labels
        lines = ["\t" + "\t".join(labels)]
        for lab, row in zip(labels, self.matrix):
            lines.append(lab + "\t" + "\t".join(f"{v:.10f}" for v in row))
        return "\n".join(lines) + "\n"


def cluster_labels(n: int) -> list[str]:
    letters = string.ascii_uppercase
    return [letters[i] if i < 26 else f"C{i}" for i in range(n)]


def heatmap(profiles, assignments, set_size: int, rng: np.random.Generator, clusters: Sequence[int] | None = None) -> SimilarityHeatmap:
    """Cell (i, j): cosine between the set-1 mean profile of cluster i and the
    set-2 mean profile of cluster j; the two sets of a cluster are disjoint."""
    x = np.asarray(profiles, dtype=np.float64)
    assignments = np.asarray(assignments)
    if set_size < 1:
        raise ConfigError("set size must be >= 1")
    if clusters is None:
        clusters = sorted(int(c) for c in np.unique(assignments))
    one, two = [], []
    for c in clusters:
        members = np.flatnonzero(assignments == c)
        if members.size < 2 * set_size:
            raise SetSizeError(f"cluster {c} has {members.size} members, needs {2 * set_size}")
        pick = rng.permutation(members)[: 2 * set_size]
        one.append(np.sort(pick[:set_size]))
        two.append(np.sort(pick[set_size:]))
    k = len(clusters)
    m = np.zeros((k, k))
    for i in range(k):
        mi = x[one[i]].mean(axis=0)
        for j in range(k):
            m[i, j] = cosine(mi, x[two[j]].mean(axis=0))
    return SimilarityHeatmap(m, list(clusters), one, two)


def block_diagonal_score(matrix) -> float:
    m = np.asarray(matrix, dtype=np.float64)
    k = m.shape[0]
    diag = np.diag(m).mean()
    if k == 1:
        return float(diag)
    off = (m.sum() - np.trace(m)) / (k * k - k)
    return float(diag - off)


def cluster_agreement(assignments, labels) -> float:
    """Fraction of points matched under the best cluster-to-label mapping."""
    a = np.asarray(assignments)
    b = np.asarray(labels)
    ua, ub = np.unique(a), np.unique(b)
    table = np.zeros((ua.size, ub.size), dtype=np.int64)
    for i, x in enumerate(ua):
        for j, y in enumerate(ub):
            table[i, j] = np.count_nonzero((a == x) & (b == y))
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / a.size)


def largest_clusters(assignments, count: int, min_size: int) -> list[int]:
    """Up to ``count`` cluster ids with at least ``min_size`` members, largest first."""
    ids, sizes = np.unique(np.asarray(assignments), return_counts=True)
    order = sorted(zip(-sizes, ids))
    chosen = [int(i) for s, i in order if -s >= min_size][:count]
    return sorted(chosen)
