"""SASRec+ and BERT4Rec+ with item, positional and auxiliary embeddings.

Layer arrangement (both variants), post-sublayer normalisation as in the
original SASRec/BERT4Rec code:

    H0  = dropout(E_V[v_t] + E_P[t] + k_{v_t})
    H'  = LN(H + dropout(Attn(H)))
    H'' = LN(H' + dropout(FFN(H')))

``Attn`` is single-head causal attention without an output matrix for
``sasrec_plus`` and multi-head bidirectional attention with ``W_O`` for
``bert4rec_plus``. FFN uses ReLU for the former, GELU for the latter. Scores
are dot products with the (tied) item table ``E_V``.

Gradients are derived by hand per layer; ``tests/test_gradients.py`` checks
every parameter against central differences.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .auxiliary import AuxProjection, FusionConfig
from .dataset import PAD, truncate_pad
from .errors import ColdStartError, ConfigError, DimensionError
from .numerics import (
    AdamState,
    Parameter,
    adam_step,
    derive_seed,
    gelu,
    gelu_grad,
    layer_norm_backward,
    layer_norm_forward,
    make_rng,
    masked_softmax,
    relu,
    relu_grad,
    softmax_backward,
)

VARIANTS = ("sasrec_plus", "bert4rec_plus")


@dataclass
class ModelConfig:
    variant: str = "sasrec_plus"
    n_layers: int = 2
    n_heads: int = 1
    d: int = 64
    max_len: int = 50
    dropout: float = 0.2
    mask_prob: float = 0.2
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    use_aux: bool = True
    last_item_mask: bool = True
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.variant == "sasrec_plus" and self.n_heads != 1:
            raise ConfigError("sasrec_plus uses a single attention head")
        if self.n_heads < 1 or self.d % self.n_heads:
            raise ConfigError(f"n_heads={self.n_heads} must divide d={self.d}")
        if self.max_len < 1 or self.d < 1:
            raise ConfigError("d and max_len must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.variant == "bert4rec_plus" and not 0.0 < self.mask_prob < 1.0:
            raise ConfigError("mask_prob must lie in (0, 1) for bert4rec_plus")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    @property
    def bidirectional(self) -> bool:
        return self.variant == "bert4rec_plus"


@dataclass
class ForwardTrace:
    attention: list[np.ndarray]  # per layer, (B, h, N, N)
    hidden: np.ndarray  # (B, N, d)


def _dropout(x, rate, train, rng):
    if not train or rate == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


class SeqRecModel:
    def __init__(self, config: ModelConfig, n_items: int, fusion: FusionConfig | None = None, modality_dims: dict | None = None):
        self.config = config
        self.n_items = int(n_items)
        self.fusion = fusion if config.use_aux else None
        self.modality_dims = dict(modality_dims or {})
        if self.fusion is not None and self.fusion.d != config.d:
            raise ConfigError(f"fusion target dim {self.fusion.d} differs from model d {config.d}")
        rng = make_rng(derive_seed(config.seed, "init"))
        d, n = config.d, config.max_len
        self.params: dict[str, Parameter] = {}
        item = rng.normal(0.0, 1.0 / np.sqrt(d), size=(self.n_items + 2, d))
        item[PAD] = 0.0
        self._add("item_emb", item)
        self._add("pos_emb", rng.normal(0.0, 1.0 / np.sqrt(d), size=(n, d)))
        self.projection = None
        if self.fusion is not None:
            # own stream, so a plain model with the same seed gets identical shared weights
            self.projection = AuxProjection(self.fusion, self.modality_dims, make_rng(derive_seed(config.seed, "init:aux")))
            for p in self.projection.parameters():
                self.params[p.name] = p
        for layer in range(config.n_layers):
            pre = f"block{layer}."
            for name in ("Wq", "Wk", "Wv"):
                self._add(pre + name, _xavier(rng, d, d))
            if config.bidirectional:
                self._add(pre + "Wo", _xavier(rng, d, d))
            self._add(pre + "ln1.g", np.ones((1, d)))
            self._add(pre + "ln1.b", np.zeros((1, d)))
            self._add(pre + "ffn.W1", _xavier(rng, d, d))
            self._add(pre + "ffn.b1", np.zeros((1, d)))
            self._add(pre + "ffn.W2", _xavier(rng, d, d))
            self._add(pre + "ffn.b2", np.zeros((1, d)))
            self._add(pre + "ln2.g", np.ones((1, d)))
            self._add(pre + "ln2.b", np.zeros((1, d)))

    def _add(self, name, value):
        self.params[name] = Parameter(name, value)

    # ------------------------------------------------------------------ utils
    @property
    def mask_id(self) -> int:
        return self.n_items + 1

    @property
    def uses_aux(self) -> bool:
        return self.projection is not None

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, v in state.items():
            if self.params[k].value.shape != v.shape:
                raise DimensionError(f"parameter {k}: shape {v.shape} does not match {self.params[k].value.shape}")
            self.params[k].value[...] = v

    def clone(self) -> "SeqRecModel":
        return copy.deepcopy(self)

    # ---------------------------------------------------------------- forward
    def embed(self, seqs: np.ndarray, aux: dict | None):
        """H0 before dropout: item + positional + auxiliary embedding."""
        seqs = np.asarray(seqs, dtype=np.int64)
        if seqs.ndim != 2 or seqs.shape[1] != self.config.max_len:
            raise DimensionError(f"expected (batch, {self.config.max_len}) ids, got {seqs.shape}")
        if seqs.size and (seqs.min() < 0 or seqs.max() > self.mask_id):
            raise DimensionError(f"item id out of range [0, {self.mask_id}]")
        x = self.params["item_emb"].value[seqs] + self.params["pos_emb"].value[None]
        fused = aux_valid = None
        if self.uses_aux:
            if aux is None:
                raise ConfigError("model uses auxiliary information but no features were given")
            fused = self.projection.forward(aux)
            if fused.shape[0] != self.n_items + 2:
                raise DimensionError(f"aux features cover {fused.shape[0] - 2} items, model has {self.n_items}")
            aux_valid = (seqs != PAD) & (seqs != self.mask_id)
            x = x + np.where(aux_valid[..., None], fused[seqs], 0.0)
        return x, (fused, aux_valid)

    def _attn_mask(self, valid: np.ndarray) -> np.ndarray:
        """True where attention is blocked, shape (B, 1, N, N)."""
        n = valid.shape[1]
        blocked = ~valid[:, None, None, :] | ~valid[:, None, :, None]
        if not self.config.bidirectional:
            blocked = blocked | np.triu(np.ones((n, n), dtype=bool), k=1)[None, None]
        return blocked

    def _block_forward(self, layer, h, blocked, train, rng):
        cfg = self.config
        p = lambda name: self.params[f"block{layer}.{name}"].value  # noqa: E731
        b, n, d = h.shape
        nh = cfg.n_heads
        dh = d // nh
        scale = np.sqrt(dh)

        def split(x):
            return x.reshape(b, n, nh, dh).transpose(0, 2, 1, 3)

        qh, kh, vh = split(h @ p("Wq")), split(h @ p("Wk")), split(h @ p("Wv"))
        scores = qh @ kh.transpose(0, 1, 3, 2) / scale
        att = masked_softmax(scores, blocked, allow_empty=True)
        o = (att @ vh).transpose(0, 2, 1, 3).reshape(b, n, d)
        a = o @ p("Wo") if cfg.bidirectional else o
        a_d, keep1 = _dropout(a, cfg.dropout, train, rng)
        h1, ln1 = layer_norm_forward(h + a_d, p("ln1.g"), p("ln1.b"), cfg.ln_eps)
        z = h1 @ p("ffn.W1") + p("ffn.b1")
        act = gelu(z) if cfg.bidirectional else relu(z)
        f = act @ p("ffn.W2") + p("ffn.b2")
        f_d, keep2 = _dropout(f, cfg.dropout, train, rng)
        h2, ln2 = layer_norm_forward(h1 + f_d, p("ln2.g"), p("ln2.b"), cfg.ln_eps)
        cache = dict(h=h, qh=qh, kh=kh, vh=vh, att=att, o=o, keep1=keep1, h1=h1, ln1=ln1, z=z, act=act, keep2=keep2, ln2=ln2)
        return h2, cache

    def forward(self, seqs, aux=None, train=False, rng=None):
        """Final hidden states (B, N, d) plus the cache used by ``backward``."""
        if train and self.config.dropout > 0 and rng is None:
            raise ValueError("training forward with dropout needs an rng")
        seqs = np.asarray(seqs, dtype=np.int64)
        x, emb_cache = self.embed(seqs, aux)
        h, keep0 = _dropout(x, self.config.dropout, train, rng)
        valid = seqs != PAD
        blocked = self._attn_mask(valid)
        blocks = []
        for layer in range(self.config.n_layers):
            h, c = self._block_forward(layer, h, blocked, train, rng)
            blocks.append(c)
        cache = dict(seqs=seqs, emb=emb_cache, keep0=keep0, blocks=blocks, aux=aux)
        return h, cache

    def trace(self, cache, hidden) -> ForwardTrace:
        return ForwardTrace([c["att"] for c in cache["blocks"]], hidden)

    # --------------------------------------------------------------- backward
    def _block_backward(self, layer, dh2, c):
        cfg = self.config
        P = lambda name: self.params[f"block{layer}.{name}"]  # noqa: E731
        b, n, d = dh2.shape
        nh = cfg.n_heads
        dh_ = d // nh
        scale = np.sqrt(dh_)
        flat = lambda x: x.reshape(-1, x.shape[-1])  # noqa: E731

        dr2, dg, db = layer_norm_backward(dh2, P("ln2.g").value, c["ln2"])
        P("ln2.g").grad += dg
        P("ln2.b").grad += db
        dh1 = dr2
        df = dr2 if c["keep2"] is None else dr2 * c["keep2"]
        P("ffn.W2").grad += flat(c["act"]).T @ flat(df)
        P("ffn.b2").grad += df.sum(axis=(0, 1))
        dact = df @ P("ffn.W2").value.T
        dz = dact * (gelu_grad(c["z"]) if cfg.bidirectional else relu_grad(c["z"]))
        P("ffn.W1").grad += flat(c["h1"]).T @ flat(dz)
        P("ffn.b1").grad += dz.sum(axis=(0, 1))
        dh1 = dh1 + dz @ P("ffn.W1").value.T

        dr1, dg, db = layer_norm_backward(dh1, P("ln1.g").value, c["ln1"])
        P("ln1.g").grad += dg
        P("ln1.b").grad += db
        dh = dr1
        da = dr1 if c["keep1"] is None else dr1 * c["keep1"]
        if cfg.bidirectional:
            P("Wo").grad += flat(c["o"]).T @ flat(da)
            do = da @ P("Wo").value.T
        else:
            do = da
        doh = do.reshape(b, n, nh, dh_).transpose(0, 2, 1, 3)
        att = c["att"]
        datt = doh @ c["vh"].transpose(0, 1, 3, 2)
        dvh = att.transpose(0, 1, 3, 2) @ doh
        ds = softmax_backward(att, datt) / scale
        dqh = ds @ c["kh"]
        dkh = ds.transpose(0, 1, 3, 2) @ c["qh"]
        merge = lambda x: x.transpose(0, 2, 1, 3).reshape(b, n, d)  # noqa: E731
        h = c["h"]
        for name, g in (("Wq", merge(dqh)), ("Wk", merge(dkh)), ("Wv", merge(dvh))):
            P(name).grad += flat(h).T @ flat(g)
            dh = dh + g @ P(name).value.T
        return dh

    def backward(self, cache, dhidden):
        """Accumulate parameter gradients given dLoss/dH (B, N, d)."""
        dh = dhidden
        for layer in reversed(range(self.config.n_layers)):
            dh = self._block_backward(layer, dh, cache["blocks"][layer])
        dx = dh if cache["keep0"] is None else dh * cache["keep0"]
        seqs = cache["seqs"]
        item = self.params["item_emb"]
        np.add.at(item.grad, seqs.reshape(-1), dx.reshape(-1, dx.shape[-1]))
        item.grad[PAD] = 0.0
        self.params["pos_emb"].grad += dx.sum(axis=0)
        if self.uses_aux:
            _, aux_valid = cache["emb"]
            dk = np.where(aux_valid[..., None], dx, 0.0)
            dfused = np.zeros((self.n_items + 2, self.config.d))
            np.add.at(dfused, seqs.reshape(-1), dk.reshape(-1, dk.shape[-1]))
            self.projection.backward(cache["aux"], dfused)

    # ----------------------------------------------------------------- scores
    def item_scores(self, hidden_rows: np.ndarray, candidates: np.ndarray) -> np.ndarray:
        """Dot products of hidden rows (B, d) with candidate rows of E_V (B, C)."""
        emb = self.params["item_emb"].value[np.asarray(candidates, dtype=np.int64)]
        return np.einsum("bd,bcd->bc", hidden_rows, emb)

    # ------------------------------------------------------------------ losses
    def loss(self, batch: Sequence[Sequence[int]], aux=None, rng=None, train=True, backward=False) -> float:
        """Training loss for a batch of training sequences.

        With ``backward=True`` gradients are accumulated into ``param.grad``.
        """
        if self.config.bidirectional:
            return self._loss_cloze(batch, aux, rng, train, backward)
        return self._loss_next_item(batch, aux, rng, train, backward)

    def _loss_next_item(self, batch, aux, rng, train, backward):
        n = self.config.max_len
        inputs = np.stack([truncate_pad(s[:-1], n) for s in batch]) if batch else np.zeros((0, n), dtype=np.int64)
        targets = np.stack([truncate_pad(s[1:], n) for s in batch]) if batch else np.zeros((0, n), dtype=np.int64)
        valid = (inputs != PAD) & (targets != PAD)
        negatives = np.zeros_like(targets)
        for row, seq in enumerate(batch):
            negatives[row] = _sample_excluding(set(seq), self.n_items, n, rng)
        count = int(valid.sum())
        if count == 0:
            return 0.0
        hidden, cache = self.forward(inputs, aux, train=train, rng=rng)
        emb = self.params["item_emb"].value
        pos_emb, neg_emb = emb[targets], emb[negatives]
        s_pos = (hidden * pos_emb).sum(-1)
        s_neg = (hidden * neg_emb).sum(-1)
        per = np.logaddexp(0.0, -s_pos) + np.logaddexp(0.0, s_neg)
        loss = float(per[valid].sum() / count)
        if backward:
            g_pos = np.where(valid, _sigmoid(s_pos) - 1.0, 0.0) / count
            g_neg = np.where(valid, _sigmoid(s_neg), 0.0) / count
            dhidden = g_pos[..., None] * pos_emb + g_neg[..., None] * neg_emb
            item = self.params["item_emb"]
            d = self.config.d
            np.add.at(item.grad, targets.reshape(-1), (g_pos[..., None] * hidden).reshape(-1, d))
            np.add.at(item.grad, negatives.reshape(-1), (g_neg[..., None] * hidden).reshape(-1, d))
            self.backward(cache, dhidden)
        return loss

    def cloze_batch(self, batch, rng):
        """Masked inputs and targets (0 where not masked) for the Cloze objective."""
        n = self.config.max_len
        rows_in, rows_tg = [], []
        for seq in batch:
            ids = truncate_pad(seq, n)
            real = np.flatnonzero(ids != PAD)
            if real.size == 0:
                continue
            chosen = real[rng.random(real.size) < self.config.mask_prob]
            if chosen.size == 0:
                chosen = real[[int(rng.integers(real.size))]]
            tg = np.zeros(n, dtype=np.int64)
            tg[chosen] = ids[chosen]
            inp = ids.copy()
            inp[chosen] = self.mask_id
            rows_in.append(inp)
            rows_tg.append(tg)
            if self.config.last_item_mask:
                inp = ids.copy()
                tg = np.zeros(n, dtype=np.int64)
                tg[n - 1] = ids[n - 1]
                inp[n - 1] = self.mask_id
                rows_in.append(inp)
                rows_tg.append(tg)
        if not rows_in:
            return np.zeros((0, n), dtype=np.int64), np.zeros((0, n), dtype=np.int64)
        return np.stack(rows_in), np.stack(rows_tg)

    def _loss_cloze(self, batch, aux, rng, train, backward):
        inputs, targets = self.cloze_batch(batch, rng)
        masked = targets != PAD
        count = int(masked.sum())
        if count == 0:
            return 0.0
        hidden, cache = self.forward(inputs, aux, train=train, rng=rng)
        hm = hidden[masked]  # (M, d)
        table = self.params["item_emb"].value[1 : self.n_items + 1]
        logits = hm @ table.T
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        tgt = targets[masked] - 1
        loss = float(-logp[np.arange(count), tgt].sum() / count)
        if backward:
            dlogits = np.exp(logp)
            dlogits[np.arange(count), tgt] -= 1.0
            dlogits /= count
            dhidden = np.zeros_like(hidden)
            dhidden[masked] = dlogits @ table
            self.params["item_emb"].grad[1 : self.n_items + 1] += dlogits.T @ hm
            self.backward(cache, dhidden)
        return loss

    # -------------------------------------------------------------- inference
    def prediction_inputs(self, histories: Sequence[Sequence[int]]) -> np.ndarray:
        n = self.config.max_len
        rows = []
        for hist in histories:
            if len(hist) == 0:
                raise ColdStartError("cannot score a user with an empty history")
            if self.config.bidirectional:
                rows.append(truncate_pad(list(hist)[-(n - 1) :] + [self.mask_id] if n > 1 else [self.mask_id], n))
            else:
                rows.append(truncate_pad(hist, n))
        return np.stack(rows)

    def predict(self, histories: Sequence[Sequence[int]], candidates, aux=None) -> np.ndarray:
        """Scores (B, C) for next-item candidates given each history."""
        candidates = np.asarray(candidates, dtype=np.int64)
        if candidates.ndim == 1:
            candidates = np.broadcast_to(candidates, (len(histories), candidates.size))
        if candidates.shape[-1] == 0:
            raise ValueError("candidate list is empty")
        hidden, _ = self.forward(self.prediction_inputs(histories), aux)
        return self.item_scores(hidden[:, -1, :], candidates)


def _xavier(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _sample_excluding(excluded: set[int], n_items: int, size: int, rng) -> np.ndarray:
    if len(excluded & set(range(1, n_items + 1))) >= n_items:
        raise ValueError("no negative item available")
    draws = rng.integers(1, n_items + 1, size=size)
    if not excluded:
        return draws
    ex = np.fromiter(excluded, dtype=np.int64, count=len(excluded))
    bad = np.isin(draws, ex)
    while bad.any():
        draws[bad] = rng.integers(1, n_items + 1, size=int(bad.sum()))
        bad = np.isin(draws, ex)
    return draws


# --------------------------------------------------------------------- functional wrappers
def attention(q, k, v, mask=None, scale: float = 1.0):
    """softmax(q k^T / scale) v with ``mask`` True where a key is blocked."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    q, k, v = (np.asarray(x, dtype=np.float64) for x in (q, k, v))
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"incompatible attention shapes q{q.shape} k{k.shape} v{v.shape}")
    weights = masked_softmax(q @ np.swapaxes(k, -1, -2) / scale, None if mask is None else np.asarray(mask, dtype=bool))
    return weights, weights @ v


def multi_head_attention(h, wq, wk, wv, wo=None, n_heads: int = 1, mask=None):
    """Per-head scaled attention on (N, d) input, heads concatenated then ``wo``.

    Scale is sqrt(d / n_heads); ``mask`` (N, N) is True where a key is blocked.
    Returns (weights (h, N, N), output (N, d)).
    """
    h = np.asarray(h, dtype=np.float64)
    n, d = h.shape
    if d % n_heads:
        raise DimensionError(f"n_heads={n_heads} does not divide d={d}")
    dh = d // n_heads

    def split(x):
        return x.reshape(n, n_heads, dh).transpose(1, 0, 2)

    weights, out = attention(split(h @ wq), split(h @ wk), split(h @ wv), mask, np.sqrt(dh))
    out = out.transpose(1, 0, 2).reshape(n, d)
    return weights, out if wo is None else out @ wo


def feed_forward(x, w1, b1, w2, b2, activation: str = "relu"):
    """Position-wise act(x W1 + b1) W2 + b2 with ReLU or exact GELU."""
    act = {"relu": relu, "gelu": gelu}[activation]
    return act(np.asarray(x, dtype=np.float64) @ w1 + b1) @ w2 + b2


def forward(model: SeqRecModel, seq, aux=None):
    """Scores for every position over all item ids plus the attention trace."""
    seq = np.atleast_2d(np.asarray(seq, dtype=np.int64))
    hidden, cache = model.forward(seq, aux)
    scores = hidden @ model.params["item_emb"].value.T
    return scores, model.trace(cache, hidden)


def predict_next(model: SeqRecModel, history, aux, candidates) -> np.ndarray:
    return model.predict([list(history)], np.asarray(candidates)[None, :], aux)[0]


@dataclass
class TrainResult:
    model: SeqRecModel
    losses: list[float] = field(default_factory=list)
    valid_ndcg: list[float] = field(default_factory=list)
    best_epoch: int = 0


def train(model: SeqRecModel, split, aux=None, epochs: int | None = None, n_negatives: int = 100, log=None) -> TrainResult:
    """Seeded minibatch Adam training; keeps the best-validation-epoch parameters.

    ``best_epoch`` is 0 when the initial parameters were never beaten.
    """
    from .evaluation import build_queries, evaluate_queries, model_scorer

    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    rng = make_rng(derive_seed(cfg.seed, "train"))
    adam = AdamState(learning_rate=cfg.learning_rate)
    min_len = 1 if cfg.bidirectional else 2
    sequences = [split.train[u] for u in split.users if len(split.train[u]) >= min_len]
    queries = None
    if split.valid:
        queries = build_queries(split, "valid", n_negatives, make_rng(derive_seed(cfg.seed, "valid")))
    scorer = model_scorer(model, aux)
    result = TrainResult(model)
    best_state, best_score = model.state(), -np.inf
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(sequences))
        total, batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [sequences[i] for i in order[start : start + cfg.batch_size]]
            model.zero_grad()
            total += model.loss(batch, aux, rng, train=True, backward=True)
            batches += 1
            adam_step(model.parameters(), adam)
        result.losses.append(total / max(batches, 1))
        if queries is not None:
            score = evaluate_queries(scorer, queries).ndcg10
            result.valid_ndcg.append(score)
            if score > best_score:
                best_score, best_state, result.best_epoch = score, model.state(), epoch
        else:
            best_state, result.best_epoch = model.state(), epoch
        if log is not None:
            log(epoch, result.losses[-1], result.valid_ndcg[-1] if result.valid_ndcg else None)
    model.load_state(best_state)
    return result


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
