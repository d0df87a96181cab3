"""Leave-one-out ranking protocol: 1 ground truth + sampled negatives.

A scorer is any callable ``scorer(users, histories, candidates) -> (B, C)``
array of preference scores. Ground truth always sits in candidate column 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import SplitDataset, sample_negatives
from .errors import EmptyEvaluationError

Scorer = Callable[[Sequence[int], Sequence[Sequence[int]], np.ndarray], np.ndarray]
METRICS = ("HR@1", "HR@5", "HR@10", "NDCG@5", "NDCG@10", "MAP")


def rank_ground_truth(scores, gt_index: int = 0) -> int:
    """1-based rank; ties with the ground truth count against it."""
    scores = np.asarray(scores, dtype=np.float64)
    gt = scores[gt_index]
    others = np.delete(scores, gt_index)
    return 1 + int(np.count_nonzero(others >= gt))


def hr_at_n(rank: int, n: int) -> int:
    return int(rank <= n)


def ndcg_at_n(rank: int, n: int) -> float:
    return 1.0 / math.log2(rank + 1) if rank <= n else 0.0


def average_precision(rank: int) -> float:
    # one relevant item: precision at its rank
    return 1.0 / rank


@dataclass
class MetricReport:
    hr1: float
    hr5: float
    hr10: float
    ndcg5: float
    ndcg10: float
    map: float
    users: list[int] = field(default_factory=list)
    ranks: list[int] = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return len(self.ranks)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(METRICS, (self.hr1, self.hr5, self.hr10, self.ndcg5, self.ndcg10, self.map)))

    @classmethod
    def from_ranks(cls, users, ranks) -> "MetricReport":
        if len(ranks) == 0:
            raise EmptyEvaluationError("no eligible users to evaluate")
        r = list(ranks)
        mean = lambda xs: float(math.fsum(xs) / len(xs))  # noqa: E731
        return cls(
            hr1=mean([hr_at_n(x, 1) for x in r]),
            hr5=mean([hr_at_n(x, 5) for x in r]),
            hr10=mean([hr_at_n(x, 10) for x in r]),
            ndcg5=mean([ndcg_at_n(x, 5) for x in r]),
            ndcg10=mean([ndcg_at_n(x, 10) for x in r]),
            map=mean([average_precision(x) for x in r]),
            users=list(users),
            ranks=r,
        )

    def to_tsv(self) -> str:
        lines = ["metric\tvalue"] + [f"{k}\t{v:.10f}" for k, v in self.as_dict().items()]
        lines.append(f"users\t{self.n_users}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {"metrics": self.as_dict(), "n_users": self.n_users}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


@dataclass
class QuerySet:
    users: list[int]
    histories: list[list[int]]
    candidates: np.ndarray  # (U, 1 + k), ground truth in column 0


def build_queries(split: SplitDataset, target: str, k: int, rng: np.random.Generator) -> QuerySet:
    targets = split.targets(target)
    users = sorted(targets)
    if not users:
        raise EmptyEvaluationError(f"split has no {target} items")
    cands = np.zeros((len(users), k + 1), dtype=np.int64)
    for row, u in enumerate(users):
        cands[row, 0] = targets[u]
        cands[row, 1:] = sample_negatives(split, u, k, rng)
    return QuerySet(users, [split.history(u, target) for u in users], cands)


def evaluate_queries(scorer: Scorer, queries: QuerySet, chunk: int = 512) -> MetricReport:
    ranks = []
    for start in range(0, len(queries.users), chunk):
        sl = slice(start, start + chunk)
        scores = np.asarray(scorer(queries.users[sl], queries.histories[sl], queries.candidates[sl]), dtype=np.float64)
        ranks.extend(rank_ground_truth(row) for row in scores)
    return MetricReport.from_ranks(queries.users, ranks)


def evaluate(scorer: Scorer, split: SplitDataset, k: int = 100, rng: np.random.Generator | None = None, target: str = "test") -> MetricReport:
    if rng is None:
        raise ValueError("evaluate needs an explicit rng")
    if not split.targets(target):
        raise EmptyEvaluationError(f"no users with a {target} item")
    return evaluate_queries(scorer, build_queries(split, target, k, rng))


def model_scorer(model, aux=None) -> Scorer:
    def score(users, histories, candidates):
        return model.predict(histories, candidates, aux)

    return score


def oracle_scorer(users, histories, candidates):
    out = np.zeros(np.shape(candidates))
    out[:, 0] = 1.0
    return out


def constant_scorer(users, histories, candidates):
    return np.zeros(np.shape(candidates))


def ranks_tsv(report: MetricReport, catalog=None) -> str:
    lines = ["user_id\trank"]
    for u, r in zip(report.users, report.ranks):
        name = catalog.user_name(u) if catalog is not None else str(u)
        lines.append(f"{name}\t{r}")
    return "\n".join(lines) + "\n"
