"""Non-transformer reference recommenders: PopRec, BPR-MF and TransRec."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import SplitDataset
from .errors import PoolExhaustedError


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _negatives(histories: list[np.ndarray], owners: np.ndarray, n_items: int, rng) -> np.ndarray:
    """One uniform negative per row, outside the owning user's history."""
    out = rng.integers(1, n_items + 1, size=owners.size)
    for row in range(owners.size):
        hist = histories[owners[row]]
        if len(hist) >= n_items:
            raise PoolExhaustedError(f"user {owners[row]} has interacted with every item")
        while out[row] in hist:
            out[row] = rng.integers(1, n_items + 1)
    return out


# ---------------------------------------------------------------------- PopRec
@dataclass
class PopModel:
    counts: np.ndarray  # index = item id, slot 0 unused

    def score(self, candidates) -> np.ndarray:
        return self.counts[np.asarray(candidates, dtype=np.int64)].astype(np.float64)

    def rank(self, candidates) -> list[int]:
        """Candidates ordered by count, ties by ascending item id."""
        return sorted((int(c) for c in candidates), key=lambda c: (-self.counts[c], c))

    def scorer(self):
        return lambda users, histories, candidates: self.score(candidates)


def poprec_fit(split: SplitDataset) -> PopModel:
    counts = np.zeros(split.catalog.n_items + 1, dtype=np.int64)
    for u in split.users:
        np.add.at(counts, np.asarray(split.train[u], dtype=np.int64), 1)
    return PopModel(counts)


def poprec_score(model: PopModel, candidates) -> np.ndarray:
    return model.score(candidates)


# ------------------------------------------------------------------------- BPR
@dataclass
class BPRConfig:
    factors: int = 32
    reg: float = 1e-4
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 256
    init_std: float = 0.1


@dataclass
class BPRModel:
    user_factors: np.ndarray  # (n_users + 1, f)
    item_factors: np.ndarray  # (n_items + 1, f)
    item_bias: np.ndarray  # (n_items + 1,)
    losses: list[float] = field(default_factory=list)
    factor_norms: list[float] = field(default_factory=list)

    def score(self, user: int, candidates) -> np.ndarray:
        c = np.asarray(candidates, dtype=np.int64)
        pu = self.user_factors[user] if 0 < user < len(self.user_factors) else np.zeros(self.item_factors.shape[1])
        return self.item_bias[c] + self.item_factors[c] @ pu

    def scorer(self):
        def score(users, histories, candidates):
            return np.stack([self.score(u, c) for u, c in zip(users, candidates)])

        return score


def bpr_fit(split: SplitDataset, config: BPRConfig, rng: np.random.Generator) -> BPRModel:
    n_users, n_items, f = split.catalog.n_users, split.catalog.n_items, config.factors
    P = rng.normal(0.0, config.init_std, size=(n_users + 1, f))
    Q = rng.normal(0.0, config.init_std, size=(n_items + 1, f))
    b = np.zeros(n_items + 1)
    P[0] = 0.0
    Q[0] = 0.0
    histories = [set()] + [set(split.train.get(u, ())) for u in range(1, n_users + 1)]
    pairs = np.array([(u, i) for u in split.users for i in split.train[u]], dtype=np.int64).reshape(-1, 2)
    model = BPRModel(P, Q, b)
    lr, lam = config.learning_rate, config.reg
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            u, i = pairs[idx, 0], pairs[idx, 1]
            j = _negatives(histories, u, n_items, rng)
            loss, (gu, gi, gj, gbi, gbj) = bpr_batch(P, Q, b, u, i, j, lam)
            total += loss
            np.add.at(P, u, -lr * gu)
            np.add.at(Q, i, -lr * gi)
            np.add.at(Q, j, -lr * gj)
            np.add.at(b, i, -lr * gbi)
            np.add.at(b, j, -lr * gbj)
        model.losses.append(total / max(len(pairs), 1))
        model.factor_norms.append(float(np.sqrt((P**2).sum() + (Q**2).sum())))
    return model


def bpr_batch(P, Q, b, u, i, j, reg):
    """Regularized BPR loss of a batch and its per-row gradients.

    loss = sum over rows of -ln sigma(x) + reg * (|p_u|^2 + |q_i|^2 + |q_j|^2 + b_i^2 + b_j^2),
    x = b_i - b_j + p_u . (q_i - q_j). Gradients are returned row-aligned with
    ``u``, ``i``, ``j`` (scatter-add them to get dense gradients).
    """
    pu, qi, qj = P[u], Q[i], Q[j]
    x = b[i] - b[j] + (pu * (qi - qj)).sum(1)
    reg_term = (pu * pu).sum() + (qi * qi).sum() + (qj * qj).sum() + (b[i] ** 2).sum() + (b[j] ** 2).sum()
    loss = float(np.logaddexp(0.0, -x).sum()) + reg * float(reg_term)
    g = -_sigmoid(-x)[:, None]  # d(-ln sigma(x))/dx
    grads = (
        g * (qi - qj) + 2 * reg * pu,
        g * pu + 2 * reg * qi,
        -g * pu + 2 * reg * qj,
        g[:, 0] + 2 * reg * b[i],
        -g[:, 0] + 2 * reg * b[j],
    )
    return loss, grads


def bpr_score(model: BPRModel, user: int, candidates) -> np.ndarray:
    return model.score(user, candidates)


# -------------------------------------------------------------------- TransRec
@dataclass
class TransRecConfig:
    factors: int = 32
    reg: float = 1e-4
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 256
    init_std: float = 0.1


@dataclass
class TransRecModel:
    item_emb: np.ndarray  # gamma, (n_items + 1, f)
    user_trans: np.ndarray  # t_u, (n_users + 1, f)
    global_trans: np.ndarray  # t, (f,)
    item_bias: np.ndarray  # beta, (n_items + 1,)
    losses: list[float] = field(default_factory=list)

    def score(self, user: int, last_item: int, candidates) -> np.ndarray:
        c = np.asarray(candidates, dtype=np.int64)
        tu = self.user_trans[user] if 0 < user < len(self.user_trans) else 0.0
        anchor = self.item_emb[last_item] + self.global_trans + tu
        diff = anchor - self.item_emb[c]
        return self.item_bias[c] - (diff * diff).sum(-1)

    def scorer(self):
        def score(users, histories, candidates):
            return np.stack([self.score(u, h[-1], c) for u, h, c in zip(users, histories, candidates)])

        return score


def _project_unit_ball(x: np.ndarray, rows: np.ndarray):
    rows = np.unique(rows)
    norms = np.linalg.norm(x[rows], axis=1)
    over = norms > 1.0
    x[rows[over]] /= norms[over, None]


def transrec_fit(split: SplitDataset, config: TransRecConfig, rng: np.random.Generator) -> TransRecModel:
    n_users, n_items, f = split.catalog.n_users, split.catalog.n_items, config.factors
    G = rng.normal(0.0, config.init_std, size=(n_items + 1, f))
    G[0] = 0.0
    _project_unit_ball(G, np.arange(n_items + 1))
    T = np.zeros((n_users + 1, f))
    t = np.zeros(f)
    beta = np.zeros(n_items + 1)
    histories = [set()] + [set(split.train.get(u, ())) for u in range(1, n_users + 1)]
    triples = np.array(
        [(u, s[k], s[k + 1]) for u in split.users for s in [split.train[u]] for k in range(len(s) - 1)],
        dtype=np.int64,
    ).reshape(-1, 3)
    model = TransRecModel(G, T, t, beta)
    lr, lam = config.learning_rate, config.reg
    for _ in range(config.epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            u, i, jp = triples[idx, 0], triples[idx, 1], triples[idx, 2]
            jn = _negatives(histories, u, n_items, rng)
            loss, (gi, gp, gn, gu, gt, gbp, gbn) = transrec_batch(G, T, t, beta, u, i, jp, jn, lam)
            total += loss
            np.add.at(G, i, -lr * gi)
            np.add.at(G, jp, -lr * gp)
            np.add.at(G, jn, -lr * gn)
            np.add.at(T, u, -lr * gu)
            t -= lr * gt
            np.add.at(beta, jp, -lr * gbp)
            np.add.at(beta, jn, -lr * gbn)
            _project_unit_ball(G, np.concatenate([i, jp, jn]))
        model.losses.append(total / max(len(triples), 1))
    return model


def transrec_batch(G, T, t, beta, u, i, jp, jn, reg):
    """Regularized TransRec ranking loss of a batch and its per-row gradients.

    x = beta_jp - beta_jn - |r - g_jp|^2 + |r - g_jn|^2 with r = g_i + t + t_u;
    loss = sum of -ln sigma(x) + reg * (squared norms of the touched rows) + reg * |t|^2.
    """
    r = G[i] + t + T[u]
    dp, dn = r - G[jp], r - G[jn]
    x = beta[jp] - beta[jn] - (dp * dp).sum(1) + (dn * dn).sum(1)
    gi_, gp_, gn_, tu = G[i], G[jp], G[jn], T[u]
    reg_term = sum(float((a * a).sum()) for a in (gi_, gp_, gn_, tu)) + float((beta[jp] ** 2).sum() + (beta[jn] ** 2).sum()) + float(t @ t)
    loss = float(np.logaddexp(0.0, -x).sum()) + reg * reg_term
    g = -_sigmoid(-x)[:, None]
    dr = g * 2.0 * (G[jp] - G[jn])
    grads = (
        dr + 2 * reg * gi_,
        g * 2.0 * dp + 2 * reg * gp_,
        -g * 2.0 * dn + 2 * reg * gn_,
        dr + 2 * reg * tu,
        dr.sum(0) + 2 * reg * t,
        g[:, 0] + 2 * reg * beta[jp],
        -g[:, 0] + 2 * reg * beta[jn],
    )
    return loss, grads


def transrec_score(model: TransRecModel, user: int, last_item: int, candidates) -> np.ndarray:
    return model.score(user, last_item, candidates)
